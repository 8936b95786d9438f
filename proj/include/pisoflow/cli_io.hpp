#pragma once

// Case-config text format, binary field dumps and CSV output.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pisoflow/cases.hpp"

namespace pisoflow {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, int column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// Sectioned key-value text:
//   # comment
//   [section]
//   key = value          vectors are whitespace- or comma-separated
// Unknown sections and keys, duplicates and malformed values are errors with
// the line and column of the offending token.
CaseConfig parse_config(std::string_view text);
CaseConfig load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(print_config(c)) prints identically.
std::string print_config(const CaseConfig& config);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files that cannot be opened, written or renamed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FieldLocation : std::uint32_t { Cell = 0, BoundaryFace = 1 };

struct DumpField {
  std::string name;
  int components = 1;
  FieldLocation location = FieldLocation::Cell;
  // Component-major values in the dump's precision.
  std::variant<std::vector<float>, std::vector<double>> values;

  std::size_t size() const;
};

struct FieldDump {
  static constexpr std::uint32_t kVersion = 1;

  Precision precision = Precision::Double;
  int dim = 2;
  std::vector<std::array<int, 3>> blocks;  // per-block cell resolution
  double time = 0;
  std::vector<DumpField> fields;

  std::size_t num_cells() const;
  const DumpField& field(const std::string& name) const;
};

template <class Real>
FieldDump make_dump(const Domain& domain, const FlowState<Real>& state);
// Stores a double-precision state in the given precision; a single-precision
// run's fields are exactly representable in float.
FieldDump make_dump(const Domain& domain, const FlowState<double>& state, Precision stored);

// Little-endian byte layout:
//   "PFLWDUMP" | u32 version | u32 precision bytes (4|8) | u32 dim | f64 time
//   u32 blocks | blocks x (u32 nx, u32 ny, u32 nz)
//   u32 fields | fields x (u32 name length, name, u32 components, u32 location, u64 count)
//   payload: every field's values in order, in the dump precision
//   u64 FNV-1a checksum of everything before it
std::string encode_fields(const FieldDump& dump);
FieldDump decode_fields(std::string_view bytes);

// Atomic: writes a temporary file next to the target, then renames it.
void write_fields(const std::filesystem::path& path, const FieldDump& dump);
FieldDump read_fields(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

CsvTable trace_table(const OptimizationTrace& trace);
// One row per (path, n, iteration).
std::string ablation_traces_csv(const std::vector<AblationEntry>& entries);
// One row per (path, n): time to threshold, minimum and final loss, divergence flag.
std::string ablation_summary_csv(const std::vector<AblationEntry>& entries);

}  // namespace pisoflow

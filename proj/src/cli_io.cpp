#include "pisoflow/cli_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace pisoflow {

namespace {

struct Value {
  std::string_view text;
  int line = 0, column = 0;
};

[[noreturn]] void bad(const Value& v, const std::string& what) { throw ConfigError(v.line, v.column, what); }

double to_double(const Value& v) {
  double x = 0;
  const char* b = v.text.data();
  const char* e = b + v.text.size();
  auto [p, ec] = std::from_chars(b, e, x);
  if (ec != std::errc() || p != e || !std::isfinite(x)) bad(v, "expected a number, got '" + std::string(v.text) + "'");
  return x;
}

long long to_integer(const Value& v) {
  long long x = 0;
  const char* b = v.text.data();
  const char* e = b + v.text.size();
  auto [p, ec] = std::from_chars(b, e, x);
  if (ec != std::errc() || p != e) bad(v, "expected an integer, got '" + std::string(v.text) + "'");
  return x;
}

int to_int(const Value& v) {
  const long long x = to_integer(v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad(v, "integer out of range");
  return static_cast<int>(x);
}

bool to_bool(const Value& v) {
  if (v.text == "true" || v.text == "yes" || v.text == "1") return true;
  if (v.text == "false" || v.text == "no" || v.text == "0") return false;
  bad(v, "expected true or false, got '" + std::string(v.text) + "'");
}

std::vector<Value> split(const Value& v) {
  std::vector<Value> out;
  std::size_t i = 0;
  const auto sep = [](char c) { return c == ' ' || c == '\t' || c == ','; };
  while (i < v.text.size()) {
    while (i < v.text.size() && sep(v.text[i])) ++i;
    const std::size_t s = i;
    while (i < v.text.size() && !sep(v.text[i])) ++i;
    if (i > s) out.push_back({v.text.substr(s, i - s), v.line, v.column + static_cast<int>(s)});
  }
  return out;
}

template <class T, class F>
std::array<T, 3> to_vec(const Value& v, std::array<T, 3> fill, F conv) {
  const auto parts = split(v);
  if (parts.empty() || parts.size() > 3) bad(v, "expected one to three values");
  for (std::size_t k = 0; k < parts.size(); ++k) fill[k] = conv(parts[k]);
  return fill;
}

template <class Parse>
auto enum_value(const Value& v, Parse parse) {
  try {
    return parse(std::string(v.text));
  } catch (const std::invalid_argument& e) {
    bad(v, e.what());
  }
}

std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

template <class T>
std::string vec(const std::array<T, 3>& a) {
  std::string s;
  for (int k = 0; k < 3; ++k) s += (k ? " " : "") + num(static_cast<double>(a[k]));
  return s;
}

std::string boolean(bool b) { return b ? "true" : "false"; }

struct Key {
  const char* section;
  const char* name;
  std::function<void(CaseConfig&, const Value&)> set;
  std::function<std::string(const CaseConfig&)> get;  // empty for input-only aliases
};

OptimizationSpec& opt(CaseConfig& c) {
  if (!c.optimization) c.optimization.emplace();
  return *c.optimization;
}

const std::vector<Key>& keys() {
  using C = CaseConfig;
  using V = Value;
  static const std::vector<Key> k = {
      {"case", "name", [](C& c, const V& v) { c.name = std::string(v.text); }, [](const C& c) { return c.name; }},
      {"case", "seed",
       [](C& c, const V& v) {
         const auto x = to_integer(v);
         if (x < 0) bad(v, "seed must be non-negative");
         c.seed = static_cast<std::uint64_t>(x);
       },
       [](const C& c) { return std::to_string(c.seed); }},

      {"mesh", "kind", [](C& c, const V& v) { c.mesh = enum_value(v, parse_mesh_kind); },
       [](const C& c) { return to_string(c.mesh); }},
      {"mesh", "dim", [](C& c, const V& v) { c.mesh_params.dim = to_int(v); },
       [](const C& c) { return std::to_string(c.mesh_params.dim); }},
      {"mesh", "resolution", [](C& c, const V& v) { c.mesh_params.resolution = to_vec<int>(v, {1, 1, 1}, to_int); },
       [](const C& c) { return vec(c.mesh_params.resolution); }},
      {"mesh", "size", [](C& c, const V& v) { c.mesh_params.size = to_vec<double>(v, {1, 1, 1}, to_double); },
       [](const C& c) { return vec(c.mesh_params.size); }},
      {"mesh", "refinement_base", [](C& c, const V& v) { c.mesh_params.refinement_base = to_double(v); },
       [](const C& c) { return num(c.mesh_params.refinement_base); }},
      {"mesh", "distortion", [](C& c, const V& v) { c.mesh_params.distortion = to_double(v); },
       [](const C& c) { return num(c.mesh_params.distortion); }},
      {"mesh", "lid_velocity", [](C& c, const V& v) { c.mesh_params.lid_velocity = to_double(v); },
       [](const C& c) { return num(c.mesh_params.lid_velocity); }},
      {"mesh", "lid_side", [](C& c, const V& v) { c.mesh_params.lid_side = enum_value(v, parse_side); },
       [](const C& c) { return side_name(c.mesh_params.lid_side); }},
      {"mesh", "inflow_velocity", [](C& c, const V& v) { c.mesh_params.inflow_velocity = to_double(v); },
       [](const C& c) { return num(c.mesh_params.inflow_velocity); }},
      {"mesh", "step_height", [](C& c, const V& v) { c.mesh_params.step_height = to_double(v); },
       [](const C& c) { return num(c.mesh_params.step_height); }},
      {"mesh", "inlet_length", [](C& c, const V& v) { c.mesh_params.inlet_length = to_double(v); },
       [](const C& c) { return num(c.mesh_params.inlet_length); }},
      {"mesh", "channel_length", [](C& c, const V& v) { c.mesh_params.channel_length = to_double(v); },
       [](const C& c) { return num(c.mesh_params.channel_length); }},
      {"mesh", "buffer_length", [](C& c, const V& v) { c.mesh_params.buffer_length = to_double(v); },
       [](const C& c) { return num(c.mesh_params.buffer_length); }},
      {"mesh", "buffer_viscosity_scale", [](C& c, const V& v) { c.mesh_params.buffer_viscosity_scale = to_double(v); },
       [](const C& c) { return num(c.mesh_params.buffer_viscosity_scale); }},
      {"mesh", "obstacle_width", [](C& c, const V& v) { c.mesh_params.obstacle_width = to_double(v); },
       [](const C& c) { return num(c.mesh_params.obstacle_width); }},
      {"mesh", "obstacle_x", [](C& c, const V& v) { c.mesh_params.obstacle_x = to_double(v); },
       [](const C& c) { return num(c.mesh_params.obstacle_x); }},

      {"fluid", "viscosity",
       [](C& c, const V& v) { c.fluid.viscosity = v.text == "auto" ? 0.0 : to_double(v); },
       [](const C& c) { return c.fluid.viscosity > 0 ? num(c.fluid.viscosity) : std::string("auto"); }},
      {"fluid", "source", [](C& c, const V& v) { c.fluid.source = to_vec<double>(v, {0, 0, 0}, to_double); },
       [](const C& c) { return vec(c.fluid.source); }},
      {"fluid", "dynamic_forcing", [](C& c, const V& v) { c.fluid.dynamic_forcing = to_bool(v); },
       [](const C& c) { return boolean(c.fluid.dynamic_forcing); }},
      {"fluid", "delta", [](C& c, const V& v) { c.fluid.delta = to_double(v); },
       [](const C& c) { return num(c.fluid.delta); }},

      {"init", "kind", [](C& c, const V& v) { c.init.kind = enum_value(v, parse_init_kind); },
       [](const C& c) { return to_string(c.init.kind); }},
      {"init", "velocity", [](C& c, const V& v) { c.init.velocity = to_vec<double>(v, {0, 0, 0}, to_double); },
       [](const C& c) { return vec(c.init.velocity); }},
      {"init", "amplitude", [](C& c, const V& v) { c.init.amplitude = to_double(v); },
       [](const C& c) { return num(c.init.amplitude); }},
      {"init", "sigma_fraction", [](C& c, const V& v) { c.init.sigma_fraction = to_double(v); },
       [](const C& c) { return num(c.init.sigma_fraction); }},
      {"init", "re_tau", [](C& c, const V& v) { c.init.re_tau = to_double(v); },
       [](const C& c) { return num(c.init.re_tau); }},

      {"time", "dt", [](C& c, const V& v) { c.time.dt = to_double(v); }, [](const C& c) { return num(c.time.dt); }},
      {"time", "cfl", [](C& c, const V& v) { c.time.cfl = to_double(v); }, [](const C& c) { return num(c.time.cfl); }},
      {"time", "steps", [](C& c, const V& v) { c.time.steps = to_int(v); },
       [](const C& c) { return std::to_string(c.time.steps); }},
      {"time", "horizon", [](C& c, const V& v) { c.time.horizon = to_double(v); },
       [](const C& c) { return num(c.time.horizon); }},
      {"time", "steady_tolerance", [](C& c, const V& v) { c.time.steady_tolerance = to_double(v); },
       [](const C& c) { return num(c.time.steady_tolerance); }},

      {"solver", "tolerance", [](C& c, const V& v) { c.solver.set_tolerance(to_double(v)); }, {}},
      {"solver", "velocity_tolerance", [](C& c, const V& v) { c.solver.velocity_solver.tolerance = to_double(v); },
       [](const C& c) { return num(c.solver.velocity_solver.tolerance); }},
      {"solver", "pressure_tolerance", [](C& c, const V& v) { c.solver.pressure_solver.tolerance = to_double(v); },
       [](const C& c) { return num(c.solver.pressure_solver.tolerance); }},
      {"solver", "adjoint_velocity_tolerance",
       [](C& c, const V& v) { c.solver.adjoint_velocity_solver.tolerance = to_double(v); },
       [](const C& c) { return num(c.solver.adjoint_velocity_solver.tolerance); }},
      {"solver", "adjoint_pressure_tolerance",
       [](C& c, const V& v) { c.solver.adjoint_pressure_solver.tolerance = to_double(v); },
       [](const C& c) { return num(c.solver.adjoint_pressure_solver.tolerance); }},
      {"solver", "velocity_max_iterations",
       [](C& c, const V& v) { c.solver.velocity_solver.max_iterations = c.solver.adjoint_velocity_solver.max_iterations = to_int(v); },
       [](const C& c) { return std::to_string(c.solver.velocity_solver.max_iterations); }},
      {"solver", "pressure_max_iterations",
       [](C& c, const V& v) { c.solver.pressure_solver.max_iterations = c.solver.adjoint_pressure_solver.max_iterations = to_int(v); },
       [](const C& c) { return std::to_string(c.solver.pressure_solver.max_iterations); }},
      {"solver", "correctors", [](C& c, const V& v) { c.solver.correctors = to_int(v); },
       [](const C& c) { return std::to_string(c.solver.correctors); }},
      {"solver", "non_orthogonal_correctors",
       [](C& c, const V& v) { c.solver.non_orthogonal_correctors = v.text == "auto" ? -1 : to_int(v); },
       [](const C& c) {
         return c.solver.non_orthogonal_correctors < 0 ? std::string("auto")
                                                       : std::to_string(c.solver.non_orthogonal_correctors);
       }},
      {"solver", "skew_threshold", [](C& c, const V& v) { c.solver.skew_threshold = to_double(v); },
       [](const C& c) { return num(c.solver.skew_threshold); }},
      {"solver", "dt_max", [](C& c, const V& v) { c.solver.dt_max = to_double(v); },
       [](const C& c) { return num(c.solver.dt_max); }},
      {"solver", "precision", [](C& c, const V& v) { c.solver.precision = enum_value(v, parse_precision); },
       [](const C& c) { return to_string(c.solver.precision); }},

      {"stats", "enabled", [](C& c, const V& v) { c.stats.enabled = to_bool(v); },
       [](const C& c) { return boolean(c.stats.enabled); }},
      {"stats", "start", [](C& c, const V& v) { c.stats.start = to_int(v); },
       [](const C& c) { return std::to_string(c.stats.start); }},
      {"stats", "every", [](C& c, const V& v) { c.stats.every = to_int(v); },
       [](const C& c) { return std::to_string(c.stats.every); }},
      {"stats", "max_order", [](C& c, const V& v) { c.stats.max_order = to_int(v); },
       [](const C& c) { return std::to_string(c.stats.max_order); }},

      {"output", "dump_every", [](C& c, const V& v) { c.output.dump_every = to_int(v); },
       [](const C& c) { return std::to_string(c.output.dump_every); }},

      {"optimize", "parameter", [](C& c, const V& v) { opt(c).parameter = enum_value(v, parse_parameter); },
       [](const C& c) { return to_string(c.optimization->parameter); }},
      {"optimize", "initial", [](C& c, const V& v) { opt(c).initial = to_double(v); },
       [](const C& c) { return num(c.optimization->initial); }},
      {"optimize", "target", [](C& c, const V& v) { opt(c).target = to_double(v); },
       [](const C& c) { return num(c.optimization->target); }},
      {"optimize", "loss_scale", [](C& c, const V& v) { opt(c).loss_scale = to_double(v); },
       [](const C& c) { return num(c.optimization->loss_scale); }},
      {"optimize", "learning_rate", [](C& c, const V& v) { opt(c).learning_rate = to_double(v); },
       [](const C& c) { return num(c.optimization->learning_rate); }},
      {"optimize", "iterations", [](C& c, const V& v) { opt(c).iterations = to_int(v); },
       [](const C& c) { return std::to_string(c.optimization->iterations); }},
      {"optimize", "path", [](C& c, const V& v) { opt(c).path = enum_value(v, parse_gradient_path); },
       [](const C& c) { return to_string(c.optimization->path); }},
      {"optimize", "weight_decay", [](C& c, const V& v) { opt(c).weight_decay = to_double(v); },
       [](const C& c) { return num(c.optimization->weight_decay); }},
      {"optimize", "divergence_weight", [](C& c, const V& v) { opt(c).divergence_weight = to_double(v); },
       [](const C& c) { return num(c.optimization->divergence_weight); }},
      {"optimize", "stop_loss", [](C& c, const V& v) { opt(c).stop_loss = to_double(v); },
       [](const C& c) { return num(c.optimization->stop_loss); }},
  };
  return k;
}

const std::vector<std::string>& section_order() {
  static const std::vector<std::string> s{"case", "mesh", "fluid", "init", "time", "solver", "stats", "output", "optimize"};
  return s;
}

std::string_view trim(std::string_view s, int* lead = nullptr) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  if (lead) *lead = static_cast<int>(b);
  return s.substr(b, e - b);
}

}  // namespace

CaseConfig parse_config(std::string_view text) {
  std::map<std::string, std::map<std::string, const Key*>> table;
  for (const auto& k : keys()) table[k.section][k.name] = &k;

  CaseConfig c;
  std::string section;
  std::map<std::string, std::pair<int, int>> where;  // "section.key" -> location
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    int lead = 0;
    const std::string_view line = trim(raw, &lead);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, lead + 1, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!table.count(section)) throw ConfigError(line_no, lead + 2, "unknown section '" + section + "'");
      if (section == "optimize") opt(c);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, lead + 1, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (section.empty()) throw ConfigError(line_no, lead + 1, "key '" + key + "' outside of a section");
    if (key.empty()) throw ConfigError(line_no, lead + 1, "missing key");
    const auto it = table[section].find(key);
    if (it == table[section].end())
      throw ConfigError(line_no, lead + 1, "unknown key '" + key + "' in section [" + section + "]");
    const std::string full = section + "." + key;
    if (where.count(full)) throw ConfigError(line_no, lead + 1, "duplicate key '" + key + "'");
    where[full] = {line_no, lead + 1};
    int vlead = 0;
    const std::string_view rest = line.substr(eq + 1);
    const std::string_view value = trim(rest, &vlead);
    const Value v{value, line_no, lead + static_cast<int>(eq) + 2 + vlead};
    if (value.empty()) bad(v, "missing value for '" + key + "'");
    it->second->set(c, v);
  }

  if (!where.count("time.dt") && !where.count("time.cfl")) c.time.cfl = 0.8;
  if (!where.count("time.steps") && !where.count("time.horizon")) c.time.steps = 100;

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    // Anchor the diagnostic at the first key the message names.
    const std::string msg = e.what();
    std::pair<int, int> at{1, 1};
    std::size_t best = std::string::npos;
    for (const auto& [name, loc] : where) {
      const auto p = msg.find(name);
      if (p != std::string::npos && p < best) best = p, at = loc;
    }
    throw ConfigError(at.first, at.second, msg);
  }
  return c;
}

CaseConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.line(), e.column(), path.string() + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
  }
}

std::string print_config(const CaseConfig& c) {
  std::ostringstream os;
  for (const auto& s : section_order()) {
    if (s == "optimize" && !c.optimization) continue;
    if (os.tellp() > 0) os << "\n";
    os << "[" << s << "]\n";
    for (const auto& k : keys())
      if (k.section == s && k.get) os << k.name << " = " << k.get(c) << "\n";
  }
  return os.str();
}

// ---- field dumps ----------------------------------------------------------

std::size_t DumpField::size() const {
  return std::visit([](const auto& v) { return v.size(); }, values);
}

std::size_t FieldDump::num_cells() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += static_cast<std::size_t>(b[0]) * b[1] * (dim == 3 ? b[2] : 1);
  return n;
}

const DumpField& FieldDump::field(const std::string& name) const {
  for (const auto& f : fields)
    if (f.name == name) return f;
  throw FormatError("dump has no field '" + name + "'");
}

template <class Real>
FieldDump make_dump(const Domain& domain, const FlowState<Real>& s) {
  FieldDump d;
  d.precision = std::is_same_v<Real, float> ? Precision::Single : Precision::Double;
  d.dim = domain.dim();
  for (const auto& b : domain.blocks()) d.blocks.push_back({b.resolution[0], b.resolution[1], d.dim == 3 ? b.resolution[2] : 1});
  d.time = s.t;
  d.fields.push_back({"velocity", d.dim, FieldLocation::Cell, s.u});
  d.fields.push_back({"pressure", 1, FieldLocation::Cell, s.p});
  d.fields.push_back({"boundary_velocity", d.dim, FieldLocation::BoundaryFace, s.ub});
  return d;
}

template FieldDump make_dump<float>(const Domain&, const FlowState<float>&);
template FieldDump make_dump<double>(const Domain&, const FlowState<double>&);

FieldDump make_dump(const Domain& domain, const FlowState<double>& s, Precision stored) {
  if (stored == Precision::Double) return make_dump(domain, s);
  FlowState<float> f;
  f.u.assign(s.u.begin(), s.u.end());
  f.p.assign(s.p.begin(), s.p.end());
  f.ub.assign(s.ub.begin(), s.ub.end());
  f.t = static_cast<float>(s.t);
  return make_dump(domain, f);
}

namespace {

constexpr char kMagic[8] = {'P', 'F', 'L', 'W', 'D', 'U', 'M', 'P'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double x) { put(out, std::bit_cast<std::uint64_t>(x)); }

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b_[p_ + i])) << (8 * i);
    p_ += sizeof(U);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(p_, n);
    p_ += n;
    return s;
  }
  std::size_t pos() const { return p_; }
  std::size_t remaining() const { return b_.size() - p_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - p_ < n) throw FormatError("field dump is truncated");
  }
  std::string_view b_;
  std::size_t p_ = 0;
};

}  // namespace

std::string encode_fields(const FieldDump& d) {
  if (d.blocks.empty() || d.num_cells() == 0) throw FormatError("refusing to write an empty domain");
  if (d.dim != 2 && d.dim != 3) throw FormatError("dump dimension must be 2 or 3");
  const bool single = d.precision == Precision::Single;
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, FieldDump::kVersion);
  put<std::uint32_t>(out, single ? 4 : 8);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.dim));
  put_f64(out, d.time);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.blocks.size()));
  for (const auto& b : d.blocks)
    for (int a = 0; a < 3; ++a) {
      if (b[a] < 1) throw FormatError("block resolution must be positive");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(b[a]));
    }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.fields.size()));
  for (const auto& f : d.fields) {
    if (std::holds_alternative<std::vector<float>>(f.values) != single)
      throw FormatError("field '" + f.name + "' does not match the dump precision");
    if (f.location == FieldLocation::Cell && f.size() != d.num_cells() * static_cast<std::size_t>(f.components))
      throw FormatError("cell field '" + f.name + "' does not match the block sizes");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.name.size()));
    out += f.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.components));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.location));
    put<std::uint64_t>(out, f.size());
  }
  for (const auto& f : d.fields) {
    if (single)
      for (float x : std::get<std::vector<float>>(f.values)) put(out, std::bit_cast<std::uint32_t>(x));
    else
      for (double x : std::get<std::vector<double>>(f.values)) put_f64(out, x);
  }
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

FieldDump decode_fields(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw FormatError("not a field dump");
  const auto version = r.get<std::uint32_t>();
  if (version != FieldDump::kVersion)
    throw FormatError("unsupported field dump version " + std::to_string(version));
  FieldDump d;
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) throw FormatError("invalid precision tag");
  d.precision = width == 4 ? Precision::Single : Precision::Double;
  d.dim = static_cast<int>(r.get<std::uint32_t>());
  d.time = r.get_f64();
  const auto nb = r.get<std::uint32_t>();
  if (nb == 0 || nb > (1u << 20)) throw FormatError("invalid block count");
  for (std::uint32_t b = 0; b < nb; ++b) {
    std::array<int, 3> res{};
    for (int a = 0; a < 3; ++a) res[a] = static_cast<int>(r.get<std::uint32_t>());
    d.blocks.push_back(res);
  }
  const auto nf = r.get<std::uint32_t>();
  std::vector<std::uint64_t> counts;
  for (std::uint32_t k = 0; k < nf; ++k) {
    DumpField f;
    const auto len = r.get<std::uint32_t>();
    f.name = std::string(r.take(len));
    f.components = static_cast<int>(r.get<std::uint32_t>());
    const auto loc = r.get<std::uint32_t>();
    if (loc > 1) throw FormatError("invalid field location");
    f.location = static_cast<FieldLocation>(loc);
    counts.push_back(r.get<std::uint64_t>());
    if (counts.back() > r.remaining() / width) throw FormatError("field dump is truncated");
    d.fields.push_back(std::move(f));
  }
  for (std::size_t k = 0; k < d.fields.size(); ++k) {
    auto& f = d.fields[k];
    if (width == 4) {
      std::vector<float> v(counts[k]);
      for (auto& x : v) x = std::bit_cast<float>(r.get<std::uint32_t>());
      f.values = std::move(v);
    } else {
      std::vector<double> v(counts[k]);
      for (auto& x : v) x = r.get_f64();
      f.values = std::move(v);
    }
  }
  const std::size_t body = r.pos();
  const auto stored = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw FormatError("trailing bytes after the checksum");
  if (stored != fnv1a(bytes.substr(0, body))) throw FormatError("field dump checksum mismatch");
  return d;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path() && !std::filesystem::is_directory(path.parent_path()) &&
      !std::filesystem::create_directories(path.parent_path(), ec))
    throw IoError("cannot create directory '" + path.parent_path().string() + "'");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename to '" + path.string() + "'");
  }
}

void write_fields(const std::filesystem::path& path, const FieldDump& dump) { write_text_atomic(path, encode_fields(dump)); }

FieldDump read_fields(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open field dump '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_fields(ss.str());
}

// ---- CSV ------------------------------------------------------------------

CsvTable trace_table(const OptimizationTrace& t) {
  CsvTable tab;
  tab.header = {"iteration", "loss", "parameter", "grad_norm", "wall_time", "backward_time"};
  std::vector<double> it(t.size());
  for (std::size_t k = 0; k < it.size(); ++k) it[k] = static_cast<double>(k);
  tab.columns = {it, t.loss, t.parameter, t.grad_norm, t.wall_time, t.backward_time};
  return tab;
}

std::string ablation_traces_csv(const std::vector<AblationEntry>& entries) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "path,n,learning_rate,iteration,loss,parameter,grad_norm,wall_time\n";
  for (const auto& e : entries)
    for (std::size_t k = 0; k < e.trace.size(); ++k)
      os << to_string(e.path) << ',' << e.steps << ',' << e.learning_rate << ',' << k << ',' << e.trace.loss[k] << ','
         << e.trace.parameter[k] << ',' << e.trace.grad_norm[k] << ',' << e.trace.wall_time[k] << '\n';
  return os.str();
}

std::string ablation_summary_csv(const std::vector<AblationEntry>& entries) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "path,n,learning_rate,time_to_threshold,min_loss,final_loss,diverged,median_backward_time\n";
  for (const auto& e : entries) {
    auto b = e.trace.backward_time;
    std::sort(b.begin(), b.end());
    const double med = b.empty() ? 0.0 : b[b.size() / 2];
    os << to_string(e.path) << ',' << e.steps << ',' << e.learning_rate << ',' << e.time_to_threshold << ','
       << e.min_loss << ',' << e.trace.final_loss << ',' << (e.trace.diverged ? 1 : 0) << ',' << med << '\n';
  }
  return os.str();
}

}  // namespace pisoflow

// Command-line entry points: simulate, optimize, ablate, gradcheck, stats.
//
// Exit codes: 0 success, 1 failed check or numerical failure, 2 usage or
// config error, 3 file I/O or format error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pisoflow/cli_io.hpp"
#include "pisoflow/verify.hpp"

using namespace pisoflow;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F parse) {
  std::vector<T> out;
  try {
    for (const auto& item : split(s)) out.push_back(parse(item));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const std::out_of_range& e) {
    throw UsageError("value out of range in '" + s + "'");
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string table_text(const CsvTable& t) {
  std::ostringstream os;
  t.write(os);
  return os.str();
}

std::string dump_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fields_%06d.pfd", step);
  return buf;
}

struct SimulateArgs {
  std::string config, out;
  int dump_every = -1;
};

int simulate(const SimulateArgs& a) {
  CaseConfig c = load_config(a.config);
  if (a.dump_every >= 0) c.output.dump_every = a.dump_every;
  const Domain domain = generate_case_mesh(c.mesh, c.mesh_params);
  ensure_dir(a.out);
  const fs::path out(a.out);
  const Precision precision = c.solver.precision;
  const int every = c.output.dump_every;
  StepObserver observer;
  if (every > 0)
    observer = [&](int step, const FlowState<double>& s, const StepReport&) {
      if (step % every == 0) write_fields(out / dump_name(step), make_dump(domain, s, precision));
    };
  const auto t0 = std::chrono::steady_clock::now();
  const CaseResult r = run_case(c, nullptr, observer);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_fields(out / "final.pfd", make_dump(domain, r.state, precision));
  if (r.profile) write_text_atomic(out / "profile.csv", table_text(profile_table(*r.profile)));
  std::cout << "case=" << c.name << " steps=" << r.steps << " time=" << r.state.t
            << " max_divergence=" << r.max_divergence << " bulk=" << r.bulk_initial << "->" << r.bulk_final
            << (r.steady ? " steady" : "") << " wall=" << wall << "s\n";
  return kOk;
}

struct OptimizeArgs {
  std::string config, task, path, out;
  int steps = 10;
  int iterations = -1;
  double lr = -1;
};

CaseConfig task_config(const std::string& task, GradientPath path, int steps, double lr, int iterations) {
  if (task == "scaling") return scaling_task(steps, path, lr > 0 ? lr : 0.01, iterations > 0 ? iterations : 60);
  if (task != "lid" && task != "viscosity") throw UsageError("unknown task '" + task + "' (scaling, lid, viscosity)");
  CaseConfig c = lid_task(task == "lid" ? Parameter::LidVelocity : Parameter::Viscosity);
  c.optimization->path = path;
  if (lr > 0) c.optimization->learning_rate = lr;
  if (iterations > 0) c.optimization->iterations = iterations;
  return c;
}

GradientPath path_arg(const std::string& s) {
  try {
    return parse_gradient_path(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int optimize_cmd(const OptimizeArgs& a) {
  if (a.config.empty() == a.task.empty()) throw UsageError("give exactly one of --config and --task");
  CaseConfig c;
  if (!a.config.empty()) {
    c = load_config(a.config);
    if (!c.optimization) throw UsageError(a.config + " has no [optimize] section");
    if (!a.path.empty()) c.optimization->path = path_arg(a.path);
    if (a.lr > 0) c.optimization->learning_rate = a.lr;
    if (a.iterations > 0) c.optimization->iterations = a.iterations;
  } else {
    c = task_config(a.task, a.path.empty() ? GradientPath::Full : path_arg(a.path), a.steps, a.lr, a.iterations);
  }
  c.validate();
  const OptimizationTrace t = optimize(c);
  if (!a.out.empty()) write_text_atomic(a.out, table_text(trace_table(t)));
  std::cout << "parameter=" << to_string(c.optimization->parameter) << " path=" << to_string(c.optimization->path)
            << " iterations=" << t.size() << " final_loss=" << t.final_loss
            << " final_parameter=" << t.final_parameter << " target=" << c.optimization->target
            << (t.diverged ? " DIVERGED" : "") << "\n";
  return t.diverged ? kFailed : kOk;
}

struct AblateArgs {
  std::string task = "scaling", paths = "full,adv,p,none", n = "1,10,100", out;
  double lr = 0.01, threshold = 1e-4;
  int iterations = 60;
};

int ablate(const AblateArgs& a) {
  if (a.task != "scaling") throw UsageError("ablate supports --task scaling only");
  const auto paths = parse_list<GradientPath>(a.paths, [](const std::string& s) { return parse_gradient_path(s); });
  const auto ns = parse_list<int>(a.n, [](const std::string& s) {
    const int v = std::stoi(s);
    if (v < 1) throw std::invalid_argument("rollout length must be positive: " + s);
    return v;
  });
  if (a.lr <= 0 || a.iterations < 1 || a.threshold <= 0)
    throw UsageError("--lr, --iterations and --threshold must be positive");
  const auto entries = path_ablation(paths, ns, a.lr, a.iterations, a.threshold);
  const std::string summary = ablation_summary_csv(entries);
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text_atomic(fs::path(a.out) / "traces.csv", ablation_traces_csv(entries));
    write_text_atomic(fs::path(a.out) / "summary.csv", summary);
  }
  std::cout << summary;
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 7;
  std::string precision = "double";
  int steps = 3;
};

int gradcheck(const GradcheckArgs& a) {
  if (parse_precision(a.precision) != Precision::Double)
    throw UsageError("gradcheck needs double precision; finite differences cannot resolve 1e-4 in single");
  if (a.steps < 1) throw UsageError("--steps must be positive");
  bool ok = true;
  std::printf("%-22s %-34s %12s  %s\n", "domain", "check", "rel_error", "result");
  const auto row = [&](const std::string& dom, const std::string& what, double err, bool passed) {
    std::printf("%-22s %-34s %12.3e  %s\n", dom.c_str(), what.c_str(), err, passed ? "PASS" : "FAIL");
    ok = ok && passed;
  };
  for (const auto& d : gradcheck_domains(a.seed)) {
    for (const auto& r : kernel_gradchecks(d, a.seed)) row(d.name, r.stage, r.max_rel_error, r.passed && r.finite);
    for (const auto& r : rollout_gradchecks(d, a.steps, a.seed)) row(d.name, r.stage, r.max_rel_error, r.passed && r.finite);
    for (const auto& r : adjoint_identity_checks(d, a.seed)) row(d.name, "identity " + r.stage, r.rel_error, r.passed);
    const auto add = path_additivity(d, a.steps, a.seed);
    row(d.name, "path additivity", std::max({add.full_vs_sum, add.none_vs_bypass, add.ponly_vs_channels}),
        add.full_vs_sum <= 1e-10 && add.none_vs_bypass <= 1e-10 && add.ponly_vs_channels <= 1e-10);
  }
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? kOk : kFailed;
}

struct StatsArgs {
  std::string config, out;
  std::vector<std::string> dumps;
};

int stats(const StatsArgs& a) {
  const CaseConfig c = load_config(a.config);
  if (c.mesh != MeshKind::Channel) throw UsageError("stats needs a channel config");
  const Domain domain = generate_case_mesh(c.mesh, c.mesh_params);
  ChannelStatistics acc(channel_slices(domain), c.stats.max_order);
  for (const auto& path : a.dumps) {
    const FieldDump d = read_fields(path);
    if (d.dim != domain.dim() || d.blocks.size() != 1 || d.num_cells() != static_cast<std::size_t>(domain.num_cells()))
      throw FormatError(path + " does not match the configured mesh");
    const auto& v = d.field("velocity").values;
    std::vector<double> u;
    if (const auto* f = std::get_if<std::vector<float>>(&v))
      u.assign(f->begin(), f->end());
    else
      u = std::get<std::vector<double>>(v);
    acc.add_frame(u);
  }
  const StatsProfile p = acc.profile(effective_viscosity(c), c.fluid.delta);
  write_text_atomic(a.out, table_text(profile_table(p)));
  std::cout << "frames=" << acc.frames() << " slices=" << p.slices() << " u_tau=" << p.friction.u_tau << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable PISO solver: simulation, optimization and verification"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a case and write field dumps");
  s->add_option("--config", sim.config, "Case config file")->required();
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_option("--dump-every", sim.dump_every, "Dump interval in steps (overrides output.dump_every)");

  OptimizeArgs opt;
  auto* o = app.add_subcommand("optimize", "Gradient-descent optimization of one parameter");
  o->add_option("--config", opt.config, "Case config with an [optimize] section");
  o->add_option("--task", opt.task, "Built-in task: scaling, lid or viscosity");
  o->add_option("--path", opt.path, "Gradient path: full, adv, p or none");
  o->add_option("--n", opt.steps, "Rollout length for the scaling task");
  o->add_option("--lr", opt.lr, "Learning rate override");
  o->add_option("--iterations", opt.iterations, "Iteration count override");
  o->add_option("--out", opt.out, "Trace CSV file");

  AblateArgs abl;
  auto* b = app.add_subcommand("ablate", "Gradient-path ablation over rollout lengths");
  b->add_option("--task", abl.task, "Task (scaling)")->capture_default_str();
  b->add_option("--paths", abl.paths, "Comma-separated gradient paths")->capture_default_str();
  b->add_option("--n", abl.n, "Comma-separated rollout lengths")->capture_default_str();
  b->add_option("--lr", abl.lr, "Learning rate")->capture_default_str();
  b->add_option("--iterations", abl.iterations, "Iterations per trace")->capture_default_str();
  b->add_option("--threshold", abl.threshold, "Loss threshold for time-to-loss")->capture_default_str();
  b->add_option("--out", abl.out, "Directory for traces.csv and summary.csv");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference and adjoint checks of every backward kernel");
  g->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  g->add_option("--precision", gc.precision, "Working precision (double)")->capture_default_str();
  g->add_option("--steps", gc.steps, "Rollout length of the composite checks")->capture_default_str();

  StatsArgs st;
  auto* t = app.add_subcommand("stats", "Accumulate channel statistics from field dumps");
  t->add_option("--config", st.config, "Channel case config")->required();
  t->add_option("--out", st.out, "Profile CSV file")->required();
  t->add_option("dumps", st.dumps, "Field dump files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return simulate(sim);
    if (o->parsed()) return optimize_cmd(opt);
    if (b->parsed()) return ablate(abl);
    if (g->parsed()) return gradcheck(gc);
    if (t->parsed()) return stats(st);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}

// vidplat: simulate, sweep, report, serve.
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vidplat/service.h"
#include "vidplat/sim.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vidplat;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

// Flag-scoped validation failure.
struct FlagError {
  std::string flag;
  std::string message;
};

json read_json_file(const std::string& flag, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FlagError{flag, "cannot read '" + path + "'"};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FlagError{flag, "'" + path + "' is not valid JSON: " + e.what()};
  }
}

template <typename F>
auto with_flag(const std::string& flag, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument ||
        e.code() == ErrorCode::kNotFound) {
      throw FlagError{flag, e.what()};
    }
    throw;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kInternal, "cannot write '" + path.string() + "'");
  }
  out << text;
}

struct SimulateArgs {
  std::string plan = "vidplat";
  std::string generator;
  std::string params;
  std::string source;
  std::string trace;
  std::string behavior;
  uint64_t seed = 1;
  std::string out;
  bool extend_trace = false;
};

int simulate(const SimulateArgs& a) {
  SimInput in;
  in.seed = a.seed;
  auto kind = parse_plan_kind(a.plan);
  if (!kind) throw FlagError{"--plan", "expected a, b or vidplat"};

  json params = a.params.empty() ? json::object()
                                 : read_json_file("--params", a.params);
  if (!params.is_object()) throw FlagError{"--params", "expected an object"};
  json plan_doc = json::object();
  json task_doc = json::object();
  if (params.contains("plan")) {
    plan_doc = params["plan"];
    params.erase("plan");
  }
  if (params.contains("task")) {
    task_doc = params["task"];
    params.erase("task");
  }
  in.plan = with_flag("--params", [&] { return StrategyPlan::from_json(plan_doc); });
  in.plan.kind = *kind;
  in.plan.extend_trace = in.plan.extend_trace || a.extend_trace;

  if (!task_doc.is_object()) throw FlagError{"--params", "task: expected an object"};
  task_doc["source"] = read_json_file("--source", a.source);
  task_doc["generator"] = {{"name", a.generator}, {"params", params}};
  if (!task_doc.contains("budget_ratings") && !task_doc.contains("max_spend")) {
    task_doc["budget_ratings"] = 1000000;
  }
  in.task = with_flag("--params", [&] { return TaskConfig::from_json(task_doc); });

  in.trace = with_flag("--trace", [&] { return load_trace_csv(a.trace); });
  if (!a.behavior.empty()) {
    const json b = read_json_file("--behavior", a.behavior);
    in.behavior = with_flag("--behavior", [&] { return BehaviorModel::from_json(b); });
  }

  const SimResult result = run(in);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "report.csv", result.report.to_csv());
  write_text(dir / "report.json", result.report.to_json().dump(2) + "\n");
  write_jsonl((dir / "events.jsonl").string(), result.events);
  std::cout << result.report.to_csv();
  return kOk;
}

struct SweepArgs {
  std::string kind = "variance";
  int a = 10;
  std::string b_list = "10,20,30,40,50";
  int trials = 200;
  int demos = 10;
  uint64_t seed = 1;
  std::string trace;
  std::string out;
};

int sweep(const SweepArgs& s) {
  if (s.kind != "variance") throw FlagError{"--kind", "only 'variance' is supported"};
  SweepConfig config;
  config.a = s.a;
  config.trials = s.trials;
  config.demos = s.demos;
  config.seed = s.seed;
  config.b_values.clear();
  std::stringstream list(s.b_list);
  std::string item;
  while (std::getline(list, item, ',')) {
    try {
      size_t used = 0;
      config.b_values.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw FlagError{"--b-list", "'" + item + "' is not an integer"};
    }
  }
  if (config.b_values.empty()) throw FlagError{"--b-list", "no values"};
  if (!s.trace.empty()) {
    config.trace = with_flag("--trace", [&] { return load_trace_csv(s.trace); });
  }
  const auto rows = with_flag("--b-list", [&] { return variance_sweep(config); });
  const std::string csv = sweep_csv(rows);
  if (!s.out.empty()) {
    fs::create_directories(s.out);
    write_text(fs::path(s.out) / "sweep.csv", csv);
  }
  std::cout << csv;
  return kOk;
}

int report(const std::string& base_path, const std::string& new_path) {
  const json base_doc = read_json_file("--base", base_path);
  const json new_doc = read_json_file("--new", new_path);
  const SimReport base = with_flag("--base", [&] { return SimReport::from_json(base_doc); });
  const SimReport next = with_flag("--new", [&] { return SimReport::from_json(new_doc); });
  const Reductions r = with_flag("--new", [&] { return compare(base, next); });

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "base " << base.plan << " vs new " << next.plan << "\n";
  std::cout << "  latency reduction           " << r.latency << "\n";
  std::cout << "  cost reduction (/C_base)    " << r.cost_vs_base << "\n";
  std::cout << "  cost reduction (/C_new)     " << r.cost_vs_new << "\n";
  std::cout << "  spend reduction (/S_base)   " << r.spend_vs_base << "\n";
  std::cout << "  phase          base_s       new_s\n";
  auto row = [](const char* name, double a, double b) {
    std::cout << "  " << std::left << std::setw(12) << name << std::right
              << std::setw(10) << a << "  " << std::setw(10) << b << "\n";
  };
  row("recruitment", base.phases.recruitment, next.phases.recruitment);
  row("training", base.phases.training, next.phases.training);
  row("rating", base.phases.rating, next.phases.rating);
  row("total", base.phases.total(), next.phases.total());
  row("makespan", base.latency_s, next.latency_s);
  std::cout << "\n" << std::setprecision(12);
  std::cout << "metric,value\n";
  std::cout << "latency_reduction," << r.latency << "\n";
  std::cout << "cost_reduction_vs_base," << r.cost_vs_base << "\n";
  std::cout << "cost_reduction_vs_new," << r.cost_vs_new << "\n";
  std::cout << "spend_reduction_vs_base," << r.spend_vs_base << "\n";
  std::cout << "base_recruitment_s," << base.phases.recruitment << "\n";
  std::cout << "base_training_s," << base.phases.training << "\n";
  std::cout << "base_rating_s," << base.phases.rating << "\n";
  std::cout << "new_recruitment_s," << next.phases.recruitment << "\n";
  std::cout << "new_training_s," << next.phases.training << "\n";
  std::cout << "new_rating_s," << next.phases.rating << "\n";
  return kOk;
}

std::atomic<bool> g_stop{false};

int serve(const std::string& host, int port, std::string state_dir,
          double tick_s) {
  if (state_dir.empty()) {
    const char* env = std::getenv("VIDPLAT_STATE_DIR");
    state_dir = env != nullptr && *env != '\0' ? env : "vidplat-state";
  }
  ServiceOptions options;
  options.state_dir = state_dir;
  StudyService service(options);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  const bool ok = serve_http(service, host, port, g_stop, tick_s, [&](int bound) {
    std::cerr << "vidplat: serving on http://" << host << ":" << bound
              << " (state in " << state_dir << ")\n";
  });
  if (!ok) {
    std::cerr << "vidplat: cannot listen on " << host << ":" << port << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowdsourced QoE study orchestration and simulation"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run one strategy on a trace");
  simulate_cmd->add_option("--plan", sim.plan, "a, b or vidplat")
      ->check(CLI::IsMember({"a", "b", "vidplat"}));
  simulate_cmd->add_option("--generator", sim.generator, "Generator name")->required();
  simulate_cmd->add_option("--params", sim.params, "Generator parameters (JSON)");
  simulate_cmd->add_option("--source", sim.source, "Source content (JSON)")->required();
  simulate_cmd->add_option("--trace", sim.trace, "Recruitment trace (CSV)")->required();
  simulate_cmd->add_option("--behavior", sim.behavior, "Rater behavior model (JSON)");
  simulate_cmd->add_option("--seed", sim.seed, "Random seed");
  simulate_cmd->add_option("--out", sim.out, "Output directory")->required();
  simulate_cmd->add_flag("--extend-trace", sim.extend_trace,
                         "Resample join gaps past the end of the trace");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Cost-reduction sweep");
  sweep_cmd->add_option("--kind", sw.kind, "Sweep kind")->check(CLI::IsMember({"variance"}));
  sweep_cmd->add_option("--a", sw.a, "Lower bound of required ratings")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--b-list", sw.b_list, "Comma-separated upper bounds");
  sweep_cmd->add_option("--trials", sw.trials, "Trials per b")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--demos", sw.demos, "Demos per trial")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--seed", sw.seed, "Random seed");
  sweep_cmd->add_option("--trace", sw.trace, "Recruitment trace (CSV)");
  sweep_cmd->add_option("--out", sw.out, "Output directory");

  std::string base_path, new_path;
  auto* report_cmd = app.add_subcommand("report", "Compare two simulation reports");
  report_cmd->add_option("--base", base_path, "Baseline report.json")->required();
  report_cmd->add_option("--new", new_path, "New report.json")->required();

  std::string host = "127.0.0.1", state_dir;
  int port = 8080;
  double tick_s = 5.0;
  auto* serve_cmd = app.add_subcommand("serve", "Run the study service");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port (0 picks one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--state-dir", state_dir,
                        "Persistence root (default $VIDPLAT_STATE_DIR)");
  serve_cmd->add_option("--tick", tick_s, "Idle-expiry interval in seconds")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*simulate_cmd) {
      if (!fs::exists(sim.trace)) throw FlagError{"--trace", "file not found: " + sim.trace};
      if (!fs::exists(sim.source)) throw FlagError{"--source", "file not found: " + sim.source};
      return simulate(sim);
    }
    if (*sweep_cmd) return sweep(sw);
    if (*report_cmd) return report(base_path, new_path);
    if (*serve_cmd) return serve(host, port, state_dir, tick_s);
  } catch (const FlagError& e) {
    std::cerr << "vidplat: " << e.flag << ": " << e.message << "\n";
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "vidplat: " << to_string(e.code()) << ": " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "vidplat: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

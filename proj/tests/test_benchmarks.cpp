#include "bistro/benchmarks.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace bistro;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("bistro-test-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TraceRow row(long k, double cost, double value) {
  TraceRow r;
  r.iteration = k;
  r.cumulative_cost = cost;
  r.phase = Phase::sgd;
  r.objective_estimate = value;
  r.true_objective = value;
  return r;
}

std::vector<TraceRow> constant_trace(double value) {
  return {row(0, 0.0, value), row(1, 5.0, value), row(2, 10.0, value)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BISTRO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentSpec small_quadratic() {
  ExperimentSpec s = builtin("quadratic20");
  s.name = "small";
  s.problem.params["dim"] = 4;
  s.seeds = {1, 2, 3};
  s.budget = 60;
  s.trace_stride = 1;
  return s;
}

}  // namespace

TEST_SUITE("benchmarks") {
  TEST_CASE("builtin catalogue") {
    CHECK(builtin_names() == std::vector<std::string>{"quadratic20", "forretal", "trajectory"});
    const auto f = builtin("forretal");
    CHECK(f.budget == 300.0);
    CHECK(f.x0 == std::vector<double>{0.6});
    CHECK(f.seeds.size() == 20);
    for (const auto& o : f.optimizers) {
      CHECK(o.sizes.n == 1);
      CHECK(o.sizes.m == 2);
      CHECK(o.sizes.k == 1);
      CHECK(o.schedule.alpha0 == 0.001);
      CHECK(o.schedule.gamma == 2000.0);
    }
    CHECK(f.optimizers[0].delta == 0.5);
    const auto q = builtin("quadratic20");
    CHECK(make_problem(q.problem).dim_x == 20);
    CHECK(q.optimizers.size() == 6);
    CHECK(q.seeds.size() == 100);
    const auto t = builtin("trajectory");
    CHECK(t.optimizers[0].kind == OptimizerKind::bistro);
    CHECK(t.optimizers[0].delta == 100.0);
    CHECK(make_problem(t.problem).dim_x == 20);
    CHECK(t.seeds.size() == 10);
  }

  TEST_CASE("unknown builtin lists the available names") {
    try {
      builtin("nope");
      FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("quadratic20") != std::string::npos);
      CHECK(msg.find("trajectory") != std::string::npos);
    }
  }

  TEST_CASE("optimizer kind names round-trip") {
    for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_switch, OptimizerKind::mlmc_sgd,
                   OptimizerKind::mlmc_switch, OptimizerKind::mlmc_switch_wslf,
                   OptimizerKind::mlmc_switch_wshf, OptimizerKind::bistro})
      CHECK(optimizer_kind_from_string(to_string(k)) == k);
    CHECK_THROWS(optimizer_kind_from_string("adam"));
  }

  TEST_CASE("sweep expansion") {
    const auto specs = expand(builtin("forretal"));
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].name == "forretal-kappa0.1");
    CHECK(specs[1].name == "forretal-kappa0.9");
    CHECK(specs[1].problem.params.at("kappa") == 0.9);
    CHECK_FALSE(specs[0].sweep);
    CHECK(expand(builtin("quadratic20")).size() == 1);
  }

  TEST_CASE("JSON round trip") {
    for (const auto& name : builtin_names()) {
      const auto s = builtin(name);
      const json j = to_json(s);
      const auto back = spec_from_json(j);
      CHECK(to_json(back) == j);
    }
  }

  TEST_CASE("JSON errors carry a pointer") {
    auto pointer_of = [](const json& doc) {
      try {
        spec_from_json(doc, builtin("forretal"));
      } catch (const ConfigError& e) {
        return e.pointer();
      }
      return std::string("<none>");
    };
    CHECK(pointer_of(json::parse(R"({"seeds": []})")) == "/seeds");
    CHECK(pointer_of(json::parse(R"({"budget": -1})")) == "/budget");
    CHECK(pointer_of(json::parse(R"({"bogus": 1})")) == "/bogus");
    CHECK(pointer_of(json::parse(R"({"optimizers": [{"name": "a", "kind": "adam"}]})")) ==
          "/optimizers/0/kind");
    CHECK(pointer_of(json::parse(R"({"quantiles": [0.5, 1.5]})")) == "/quantiles");
  }

  TEST_CASE("start point resolution") {
    auto s = builtin("forretal");
    const auto p = make_problem(expand(s)[0].problem);
    CHECK(resolve_start(s, p) == Vector::Constant(1, 0.6));
    auto q = small_quadratic();
    const auto qp = make_problem(q.problem);
    CHECK(resolve_start(q, qp) == Vector::Constant(4, 3.0));
    q.x0 = {1, 2, 3, 4};
    CHECK(resolve_start(q, qp)[3] == 4.0);
    q.x0 = {1, 2};
    CHECK_THROWS(resolve_start(q, qp));
    q.x0.clear();
    CHECK(resolve_start(q, qp).isZero(0.0));
  }

  TEST_CASE("aggregate conventions") {
    const auto same = constant_trace(2.5);
    auto t = aggregate({{"A", {same, same, same}}}, {0.2, 0.5, 0.8}, 11);
    for (const auto& qv : t.values.at("A"))
      for (double v : qv) CHECK(v == 2.5);
    t = aggregate({{"A", {constant_trace(1.0), constant_trace(3.0)}}}, {0.5}, 5);
    for (double v : t.values.at("A")[0]) CHECK(v == doctest::Approx(2.0));
    CHECK(t.cost_grid.front() == 0.0);
    CHECK(t.cost_grid.back() == 10.0);
    const std::map<std::string, std::vector<std::vector<TraceRow>>> none;
    CHECK_THROWS(aggregate(none, {0.5}, 5));
    const std::map<std::string, std::vector<std::vector<TraceRow>>> one{{"A", {same}}};
    CHECK_THROWS(aggregate(one, {1.0}, 5));
  }

  TEST_CASE("aggregate steps forward and skips missing values") {
    std::vector<TraceRow> a{row(0, 0.0, 4.0), row(1, 2.0, std::nan("")), row(2, 6.0, 1.0)};
    a[1].true_objective.reset();
    const auto t = aggregate({{"A", {a, a}}}, {0.5}, 4);
    // Grid 0, 2, 4, 6.
    const auto& v = t.values.at("A")[0];
    CHECK(v[0] == 4.0);
    CHECK(v[1] == 4.0);
    CHECK(v[2] == 4.0);
    CHECK(v[3] == 1.0);
  }

  TEST_CASE("quantile interpolation") {
    CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({0, 10}, 0.2) == doctest::Approx(2.0));
    CHECK(quantile({5}, 0.8) == 5.0);
    CHECK_THROWS(quantile({}, 0.5));
  }

  TEST_CASE("budget to threshold") {
    const std::vector<TraceRow> t{row(0, 0, 5.0), row(1, 3, 2.0), row(2, 7, 0.4)};
    CHECK(*budget_to_threshold(t, 0.0, 2.0) == 3.0);
    CHECK(*budget_to_threshold(t, 0.0, 0.5) == 7.0);
    CHECK_FALSE(budget_to_threshold(t, 0.0, 0.1));
  }

  TEST_CASE("number formatting") {
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(format_number(std::nan("")) == "nan");
    CHECK(format_number(-INFINITY) == "-inf");
    TraceRow r = row(3, 1.5, 2.0);
    r.true_objective.reset();
    r.grad_norm_estimate = 0.25;
    r.learning_rate = 1;
    CHECK(format_row(r) == "3,1.5,sgd,2,,0.25,1");
  }

  TEST_CASE("every optimizer kind runs within budget and reproduces") {
    auto spec = small_quadratic();
    spec.optimizers.push_back(spec.optimizers[0]);
    spec.optimizers.back().name = "MLMC-Switch";
    spec.optimizers.back().kind = OptimizerKind::mlmc_switch;
    const auto a = run_experiment(spec, {2, std::nullopt});
    const auto b = run_experiment(spec, {1, std::nullopt});
    CHECK(a.cells.size() == 7);
    for (const auto& [name, cells] : a.cells) {
      INFO(name);
      REQUIRE(cells.size() == 3);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& run = cells[i].run;
        CHECK_FALSE(run.state.aborted);
        CHECK(run.state.ledger.spent() >= spec.budget);
        CHECK(run.state.ledger.spent() < spec.budget + 5.0);
        CHECK(run.trace.back().cumulative_cost == run.state.ledger.spent());
        const auto& other = b.cells.at(name)[i].run.trace;
        REQUIRE(other.size() == run.trace.size());
        for (std::size_t r = 0; r < other.size(); ++r)
          CHECK(format_row(other[r]) == format_row(run.trace[r]));
      }
    }
    // Warm-started runs bill their warm start.
    for (const auto& c : a.cells.at("MLMC-Switch-WSHF")) {
      bool saw = false;
      for (const auto& e : c.run.state.ledger.events()) saw = saw || e.phase == Phase::warm_start;
      CHECK(saw);
    }
  }

  TEST_CASE("quantile table is ordered across quantiles") {
    auto spec = small_quadratic();
    spec.seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    const auto res = run_experiment(spec);
    const auto t = aggregate(res, {0.2, 0.5, 0.8}, 41);
    for (const auto& [name, qv] : t.values)
      for (std::size_t g = 0; g < t.cost_grid.size(); ++g) {
        CHECK(qv[0][g] <= qv[1][g]);
        CHECK(qv[1][g] <= qv[2][g]);
      }
  }

  TEST_CASE("bound overlay indexes rows as j + 1") {
    auto spec = small_quadratic();
    const auto p = make_problem(spec.problem);
    const auto res = run_experiment(spec);
    const auto rows = bound_overlay(spec, p, res);
    REQUIRE_FALSE(rows.empty());
    const double gap0 = p.reference->true_risk(resolve_start(spec, p));
    // nu / (gamma + 1) equals the initial gap for the quadratic constants.
    CHECK(rows[0].bound == doctest::Approx(gap0));
    CHECK(rows[1].bound == doctest::Approx(4.0 * gap0 / 5.0));
  }

  TEST_CASE("median MLMC-SGD beats median SGD late in the quadratic runs") {
    ExperimentSpec spec = builtin("quadratic20");
    std::vector<OptimizerConfig> keep;
    for (const auto& o : spec.optimizers)
      if (o.name == "SGD" || o.name == "MLMC-SGD") keep.push_back(o);
    spec.optimizers = keep;
    spec.seeds.resize(40);
    spec.budget = 3000;
    const auto t = aggregate(run_experiment(spec), {0.5}, 101);
    const auto& sgd = t.values.at("SGD")[0];
    const auto& ml = t.values.at("MLMC-SGD")[0];
    for (std::size_t g = 80; g < t.cost_grid.size(); ++g) CHECK(ml[g] < sgd[g]);
  }

  TEST_CASE("golden Forretal outputs reproduce byte for byte") {
    const ExperimentSpec spec = builtin("forretal");
    const fs::path golden = fs::path(BISTRO_GOLDEN_DIR) / spec.golden;
    REQUIRE(fs::exists(golden));
    TempDir tmp("golden");
    for (const auto& s : expand(spec)) {
      const auto res = run_experiment(s, {0, tmp.path});
      write_quantiles_csv(tmp.path / s.name / "quantiles.csv", aggregate(res, s.quantiles, s.cost_grid_points));
    }
    long compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(golden)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), golden);
      INFO(rel.string());
      CHECK(slurp(tmp.path / rel) == slurp(entry.path()));
      ++compared;
    }
    CHECK(compared == 8);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("list-experiments and version") {
    CHECK(run_cli("list-experiments") == 0);
    CHECK(run_cli("--version") == 0);
    CHECK(run_cli("frobnicate") != 0);
  }

  TEST_CASE("run writes the documented files with a stable schema") {
    TempDir tmp("cli-run");
    const fs::path cfg = tmp.path / "small.json";
    std::ofstream(cfg) << R"({
  "experiment": "quadratic20",
  "name": "small",
  "problem": {"name": "quadratic", "dim": 4, "sigma2": 0.01},
  "seeds": [1, 2],
  "budget": 40
})";
    REQUIRE(run_cli("run " + cfg.string() + " -o " + (tmp.path / "a").string()) == 0);
    REQUIRE(run_cli("run " + cfg.string() + " -o " + (tmp.path / "b").string() + " -j 2") == 0);
    const fs::path out = tmp.path / "a" / "small";
    for (const char* opt : {"SGD", "SGD-Switch", "MLMC-SGD", "MLMC-Switch-WSLF", "MLMC-Switch-WSHF", "BISTRO"})
      for (int seed : {1, 2}) {
        const fs::path f = out / opt / ("seed-" + std::to_string(seed) + ".csv");
        REQUIRE(fs::exists(f));
        std::ifstream in(f);
        std::string header;
        std::getline(in, header);
        CHECK(header == "iteration,cumulative_cost,phase,objective_estimate,true_objective,"
                        "grad_norm_estimate,learning_rate");
        CHECK(slurp(f) == slurp(tmp.path / "b" / "small" / opt / f.filename()));
      }
    CHECK(fs::exists(out / "quantiles.csv"));
    CHECK(fs::exists(out / "bounds.csv"));
    CHECK(slurp(out / "quantiles.csv") == slurp(tmp.path / "b" / "small" / "quantiles.csv"));
    CHECK(slurp(out / "bounds.csv").rfind("iteration,cumulative_cost,bound_value\n", 0) == 0);

    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.contains("version"));
    CHECK(manifest.at("experiment").at("budget") == 40.0);
    CHECK(manifest.at("x0").size() == 4);
    CHECK(manifest.at("problem_parameters").contains("sigma2"));
    CHECK(manifest.at("defaults").at("norm") == "euclidean");
  }

  TEST_CASE("output root from the environment") {
    TempDir tmp("cli-env");
    const fs::path cfg = tmp.path / "tiny.json";
    std::ofstream(cfg) << R"({"experiment": "quadratic20", "name": "tiny", "seeds": [1], "budget": 5,
      "emit": {"traces": true, "quantiles": false, "bounds": false, "diagnostics": false}})";
    const std::string env = "BISTRO_OUTPUT_ROOT=" + (tmp.path / "env").string() + " ";
    CHECK(std::system((env + BISTRO_CLI_PATH + " run " + cfg.string() + " > /dev/null").c_str()) == 0);
    CHECK(fs::exists(tmp.path / "env" / "tiny" / "BISTRO" / "seed-1.csv"));
    CHECK_FALSE(fs::exists(tmp.path / "env" / "tiny" / "quantiles.csv"));
  }

  TEST_CASE("configuration errors exit with status 2") {
    TempDir tmp("cli-err");
    auto write = [&](const std::string& name, const std::string& body) {
      const fs::path p = tmp.path / name;
      std::ofstream(p) << body;
      return p.string();
    };
    const std::string out = " -o " + (tmp.path / "out").string();
    CHECK(run_cli("run " + write("empty.json", R"({"experiment": "forretal", "seeds": []})") + out) == 2);
    CHECK(run_cli("run " + write("bad.json", R"({"experiment": "forretal", "seeds": [1,)") + out) == 2);
    CHECK(run_cli("run " + write("noproblem.json", R"({"seeds": [1], "budget": 5})") + out) == 2);
    CHECK(run_cli("diagnose " + write("noproblem2.json", R"({"diagnostics": {"replicates": 10}})") + out) == 2);
    CHECK(run_cli("run " + write("noemit.json", R"({"experiment": "forretal", "emit": {"traces": false,
      "quantiles": false, "bounds": false, "diagnostics": false}})") + out) == 2);
    CHECK(run_cli("run " + (tmp.path / "missing.json").string() + out) == 2);
  }

  TEST_CASE("diagnose writes a constants report") {
    TempDir tmp("cli-diag");
    const fs::path cfg = tmp.path / "diag.json";
    std::ofstream(cfg) << R"({"name": "diag",
      "problem": {"name": "quadratic", "dim": 5, "sigma2": 0.0},
      "diagnostics": {"replicates": 200}})";
    REQUIRE(run_cli("diagnose " + cfg.string() + " -o " + tmp.path.string()) == 0);
    const json report = json::parse(slurp(tmp.path / "diag" / "diagnostics.json"));
    CHECK(report.at("estimated").at("W") == 0.0);
    CHECK(report.at("estimated").at("W_ML").get<double>() < 1e-20);
    CHECK(report.contains("declared"));
    CHECK(report.contains("dominance"));
    CHECK(report.contains("switch_gap"));
    CHECK(report.contains("trust_lambda"));
  }
}

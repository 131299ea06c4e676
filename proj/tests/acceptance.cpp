// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Every tolerance is fixed below.
#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sae/sae.hpp"
#include "test_support.hpp"

using namespace sae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------

Outcome gradient_fidelity() {
  constexpr double kMaxRelativeError = 1e-4;
  constexpr double kStep = 1e-5;
  constexpr double kBudgetSeconds = 10.0;
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240611);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto inst = oracle::random_elbo_instance(rng, i % 2 ? Task::regression : Task::classification);
    const auto& c = inst.net.config;
    out.require(c.depth <= 3 && c.inputs <= 2 && inst.x.rows() <= 4 && c.width <= 8, "instance size bounds");
    worst = std::max(worst, oracle::elbo_gradient_error(inst, kStep));
  }
  const double secs = seconds_since(t0);
  out.require(worst < kMaxRelativeError, "max relative error " + fmt(worst));
  out.require(secs < kBudgetSeconds, "runtime " + fmt(secs) + " s");
  out.note("20 instances, worst relative error " + fmt(worst));
  return out;
}

// 2 -------------------------------------------------------------------------

Outcome objective_decomposition() {
  constexpr double kTolerance = 1e-12;
  Outcome out;
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto inst = oracle::random_elbo_instance(rng, i % 2 ? Task::regression : Task::classification);
    inst.alpha = uniform(rng, 0.05, 0.5);
    const auto a = inst.value();
    out.require(std::abs(a.total - (a.data_fit + a.alpha * a.regularizer)) <= kTolerance, "total = data_fit + a*reg");

    const double alpha = inst.alpha;
    inst.alpha = 0.0;
    const auto z = inst.value();
    out.require(z.total == z.data_fit, "alpha = 0 leaves the data fit only");

    inst.alpha = 2.0 * alpha;
    const auto d = inst.value();
    out.require(d.data_fit == a.data_fit && d.regularizer == a.regularizer, "doubling alpha keeps both terms");
    out.require(d.alpha * d.regularizer == 2.0 * (a.alpha * a.regularizer), "doubling alpha doubles the gap exactly");
    out.require(std::abs((d.total - d.data_fit) - 2.0 * (a.total - a.data_fit)) <= kTolerance,
                "total minus data fit doubles");
  }
  out.note("20 random instances");
  return out;
}

// 3 -------------------------------------------------------------------------

Outcome kl_correctness() {
  constexpr double kTolerance = 1e-12;
  Outcome out;
  Rng rng(3);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t D = 1 + uniform_index(rng, 8);
    auto th = theta(oracle::random_tensor(1, D, rng, -4.0, 4.0), uniform(rng, 0.1, 1.0));
    double direct = 0.0;
    for (double t : th.values())
      if (t > 0.0) direct += t * std::log(t * static_cast<double>(D));
    worst = std::max(worst, std::abs(kl_to_uniform(th.values()) - direct));
  }
  out.require(worst <= kTolerance, "direct evaluation, max diff " + fmt(worst));
  for (std::size_t D = 1; D <= 8; ++D) {
    std::vector<double> u(D, 1.0 / static_cast<double>(D)), one(D, 0.0);
    one[D - 1] = 1.0;
    out.require(std::abs(kl_to_uniform(u)) <= kTolerance, "uniform gives 0 at D=" + std::to_string(D));
    out.require(std::abs(kl_to_uniform(one) - std::log(static_cast<double>(D))) <= kTolerance,
                "one-hot gives log D at D=" + std::to_string(D));
  }
  return out;
}

// 4 -------------------------------------------------------------------------

Outcome sampler_statistics() {
  constexpr double kFrequencyTolerance = 0.01;
  constexpr double kSignificance = 0.01;
  constexpr std::size_t kDraws = 100000;
  constexpr double kBudgetSeconds = 5.0;
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> probs{0.6, 0.3, 0.1};
  std::vector<double> logits;
  for (double p : probs) logits.push_back(std::log(p));
  Rng rng(11);
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < kDraws; ++i) counts[sample_top_k(logits, 1, 1.0, rng)[0]] += 1.0;
  double chi2 = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    const double freq = counts[j] / kDraws;
    out.require(std::abs(freq - probs[j]) <= kFrequencyTolerance, "frequency of exit " + std::to_string(j));
    const double expected = probs[j] * kDraws;
    chi2 += (counts[j] - expected) * (counts[j] - expected) / expected;
  }
  const double critical = boost::math::quantile(boost::math::chi_squared(2.0), 1.0 - kSignificance);
  out.require(chi2 < critical, "chi-square " + fmt(chi2) + " vs " + fmt(critical));

  for (int i = 0; i < 1000; ++i) {
    const std::size_t D = 1 + uniform_index(rng, 6);
    auto l = oracle::random_tensor(1, D, rng, -5.0, 5.0);
    auto s = sample_top_k(l.values(), D, uniform(rng, 0.01, 1.0), rng);
    ExitSet all(D);
    for (std::size_t j = 0; j < D; ++j) all[j] = j;
    out.require(s == all, "K = D returns every exit");
  }
  const double secs = seconds_since(t0);
  out.require(secs < kBudgetSeconds, "runtime " + fmt(secs) + " s");
  out.note("freqs " + fmt(counts[0] / kDraws) + "/" + fmt(counts[1] / kDraws) + "/" + fmt(counts[2] / kDraws) +
           ", chi2 " + fmt(chi2) + " < " + fmt(critical));
  return out;
}

// 5 -------------------------------------------------------------------------

Outcome cost_oracles() {
  constexpr double kBudgetSeconds = 5.0;
  using namespace cost;
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    SAEConfig c;
    c.inputs = 1 + uniform_index(rng, 4);
    c.depth = 1 + uniform_index(rng, 6);
    c.active_exits = 1 + uniform_index(rng, c.depth);
    c.width = 1 + uniform_index(rng, 48);
    c.input_dim = 1 + uniform_index(rng, 16);
    c.output_dim = 1 + uniform_index(rng, 8);
    c.task = uniform_index(rng, 2) ? Task::regression : Task::classification;
    auto net = build_network(c);
    Count built = 0;
    for (auto& p : net.parameters()) built += p.tensor->size();
    out.require(training_cost(c).total.params == built, "fc params equal built network");
  }
  out.require(fc_exit_cost(4, 4, 0, 2) == Cost{}, "fc exit with n = 0");
  out.require(conv_exit_cost(64, 64, 0, 10, 8, 8) == Cost{}, "conv exit with n = 0");
  out.require(vit_exit_cost(192, 0, 10, 64, 2) == Cost{}, "vit exit with n = 0");
  out.require(fc_input_cost(128, 2, 10) == Cost{2688, 2688}, "fc input 2688");
  out.require(fc_exit_cost(4, 4, 1, 2).params == 38, "fc exit 38");
  out.require(conv_input_cost(64, 2, 3, 3, 32, 32) == Cost{3520, 3604480}, "conv input 3520 / 3,604,480");
  out.require(vit_input_cost(192, 4, 2, 3, 64) == Cost{18624, 1191936}, "vit input 18,624 / 1,191,936");
  // Exit formulas term by term.
  out.require(conv_exit_cost(8, 16, 2, 10, 4, 4) ==
                  Cost{8 * 16 + 16 + 2 * 16 + 16 * 2 * 10 + 2 * 10,
                       8 * 16 * 16 + 16 * 16 + 2 * 16 * 16 + 16 * 16 + 16 * 16 + 16 * 2 * 10 + 2 * 10},
              "conv exit terms");
  out.require(vit_exit_cost(12, 1, 5, 16, 2) ==
                  Cost{12 * 12 + 12 + 2 * 12 + 12 * 5 + 5,
                       12 * 12 * 18 + 12 * 18 + 12 * 18 + 2 * 12 * 18 + 12 * 18 + 12 * 5 + 5},
              "vit exit terms");
  const double secs = seconds_since(t0);
  out.require(secs < kBudgetSeconds, "runtime " + fmt(secs) + " s");
  out.note("100 random fc configs");
  return out;
}

// 6 -------------------------------------------------------------------------

Outcome taxonomy() {
  using cost::Category;
  Outcome out;
  std::size_t rows = 0;
  for (std::size_t D = 1; D <= 5; ++D) {
    auto grid = enumerate_configs(4, D);
    out.require(grid.size() == 4 * D, "grid size at D=" + std::to_string(D));
    for (const auto& r : grid) {
      ++rows;
      const std::size_t N = r.inputs, K = r.active_exits;
      Category want;
      if (N == 1 && K == 1) want = Category::SE;
      else if (N == 1) want = Category::EE;
      else if (K == 1) want = Category::MIMO;
      else if (K == D) want = Category::MIMMO;
      else want = Category::IB;
      out.require(r.category == want, "category of (" + std::to_string(N) + "," + std::to_string(K) + "," +
                                          std::to_string(D) + ")");
      if (D >= 2) out.require(r.sizes.naive > r.sizes.reduced, "naive exceeds reduced");
    }
  }
  auto small = enumerate_configs(2, 3);
  const char* expect[] = {"SE", "EE", "EE", "MIMO", "IB", "MIMMO"};
  for (std::size_t i = 0; i < 6; ++i) out.require(cost::to_string(small[i].category) == std::string(expect[i]), "2x3 grid");
  out.note(std::to_string(rows) + " grid rows");
  return out;
}

// 7 -------------------------------------------------------------------------

struct ThetaAudit {
  static constexpr double kRowSumTolerance = 1e-10;
  std::size_t snapshots = 0;
  bool valid = true;

  void operator()(const StepRecord& r) {
    if (!r.theta) return;
    ++snapshots;
    for (std::size_t i = 0; i < r.theta->rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.theta->cols(); ++j) {
        const double v = (*r.theta)(i, j);
        if (!(v >= 0.0 && v <= 1.0)) valid = false;
        s += v;
      }
      if (!(std::abs(s - 1.0) <= kRowSumTolerance)) valid = false;
    }
  }
};

Outcome desk_scale_training() {
  constexpr double kMinAccuracy = 0.95;
  constexpr double kClusterBudgetSeconds = 60.0;
  constexpr double kMaxMse = 0.05;
  Outcome out;
  ThetaAudit audit;
  auto record = [&](const StepRecord& r) { audit(r); };

  {  // (a)
    SAEConfig m;
    m.inputs = 2;
    m.active_exits = 2;
    m.depth = 4;
    m.width = 32;
    m.input_dim = 2;
    m.output_dim = 2;
    m.seed = 1;
    TrainerConfig t;
    t.learning_rate = 1e-3;
    t.batch_size = 64;
    t.log_interval = 50;
    t.seed = 1;
    ScheduleSpec s;
    s.steps = 2000;
    auto data = gen_data(DataKind::two_clusters, 1000, 0.0, 1);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = train_loop(m, t, s, data, record);
    const auto ev = evaluate(res.state.network, res.state.posterior, data.feature_matrix(), m.active_exits);
    const double secs = seconds_since(t0);
    const double acc = compute_metrics(ev.predictions, data, 2).values.at("accuracy");
    out.require(acc >= kMinAccuracy, "two_clusters accuracy " + fmt(acc));
    out.require(secs < kClusterBudgetSeconds, "two_clusters runtime " + fmt(secs) + " s");
    out.note("(a) accuracy " + fmt(acc) + " in " + fmt(secs) + " s");
  }
  {  // (b)
    SAEConfig m;
    m.inputs = 2;
    m.active_exits = 2;
    m.depth = 3;
    m.width = 32;
    m.input_dim = 1;
    m.output_dim = 1;
    m.task = Task::regression;
    m.seed = 2;
    TrainerConfig t;
    t.learning_rate = 3e-3;
    t.batch_size = 64;
    t.log_interval = 100;
    t.seed = 2;
    ScheduleSpec s;
    s.steps = 5000;
    auto data = gen_data(DataKind::sinusoid_regression, 1000, 0.1, 2);
    auto res = train_loop(m, t, s, data, record);
    const auto ev = evaluate(res.state.network, res.state.posterior, data.feature_matrix(), m.active_exits);
    const double mse = compute_metrics(ev.predictions, data, 1).values.at("mse");
    out.require(mse < kMaxMse, "sinusoid mse " + fmt(mse));
    out.note("(b) mse " + fmt(mse));
  }
  std::vector<double> concentration;
  {  // (d)
    SAEConfig m;
    m.inputs = 2;
    m.active_exits = 1;
    m.depth = 4;
    m.width = 16;
    m.input_dim = 2;
    m.output_dim = 2;
    m.seed = 3;
    TrainerConfig t;
    t.learning_rate = 1e-3;
    t.batch_size = 64;
    t.log_interval = 50;
    t.seed = 3;
    ScheduleSpec s;
    s.steps = 1000;
    s.temperature_start = 1.0;
    s.temperature_end = 0.01;
    auto data = gen_data(DataKind::spirals, 1000, 0.05, 3);
    auto res = train_loop(m, t, s, data, record);
    const auto th = theta(res.state.posterior);
    for (std::size_t i = 0; i < m.inputs; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < m.depth; ++j) mx = std::max(mx, th(i, j));
      concentration.push_back(mx);
      out.require(mx > 1.0 / static_cast<double>(m.depth), "input " + std::to_string(i) + " max theta " + fmt(mx));
    }
  }
  out.require(audit.valid, "theta rows are distributions at every logged step");
  out.require(audit.snapshots > 0, "theta snapshots were logged");
  std::string conc;
  for (double c : concentration) conc += (conc.empty() ? "" : "/") + fmt(c);
  out.note("(c) " + std::to_string(audit.snapshots) + " snapshots valid; (d) max theta " + conc + " > 0.25");
  return out;
}

// 8 -------------------------------------------------------------------------

Outcome evaluation_semantics() {
  constexpr double kTolerance = 1e-12;
  Outcome out;
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    SAEConfig c;
    c.depth = 4;
    c.width = 6;
    c.input_dim = 3;
    c.output_dim = 4;
    c.seed = 100 + trial;
    auto net = build_network(c);
    DepthPosterior q{oracle::random_tensor(1, 4, rng, -2.0, 2.0), 1.0};
    Tensor x = oracle::random_tensor(5, 3, rng);
    auto res = evaluate(net, q, x, 1);
    auto direct = infer(net, x)[argmax(q.logits.values())];
    for (std::size_t r = 0; r < 5; ++r) {
      auto p = softmax(direct.data().subspan(r * 4, 4));
      for (std::size_t o = 0; o < 4; ++o)
        out.require(std::abs(res.predictions[r].probabilities[o] - p[o]) <= kTolerance, "N=K=1 equals argmax exit");
    }
  }
  {
    SAEConfig c;
    c.inputs = 2;
    c.active_exits = 2;
    c.depth = 3;
    c.output_dim = 3;
    Tensor raw = Tensor::matrix(1, 6, {0.3, -1.0, 2.0, 0.3, -1.0, 2.0});
    auto th = mask_top_k(oracle::random_tensor(2, 3, rng), 2, 0.5);
    auto agg = aggregate({raw, raw, raw}, th, c);
    auto p = softmax(raw.data().subspan(0, 3));
    for (std::size_t o = 0; o < 3; ++o)
      out.require(std::abs(agg[0].probabilities[o] - p[o]) <= kTolerance, "identical exits give the common prediction");
  }
  {
    SAEConfig c;
    c.depth = 2;
    c.active_exits = 2;
    c.task = Task::regression;
    auto agg = aggregate({Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {2.0, 0.0})},
                         Tensor::matrix(1, 2, {0.5, 0.5}), c);
    out.require(agg[0].mean[0] == 1.0, "mixture mean 1");
    out.require(agg[0].variance[0] == 2.0, "mixture variance exactly 2");
    out.note("mixture mean " + fmt(agg[0].mean[0]) + ", variance " + fmt(agg[0].variance[0]));
  }
  return out;
}

// 9 -------------------------------------------------------------------------

Outcome metric_suite() {
  constexpr double kHandTolerance = 1e-12;
  constexpr double kAnalyticTolerance = 1e-10;
  Outcome out;
  ProbabilityMatrix p{{0.4, 0.6, 0.6, 0.4, 0.1, 0.9, 0.1, 0.9}, 2};
  std::vector<std::size_t> y{1, 1, 1, 1};
  const double e = ece(p, y, 15);
  out.require(std::abs(e - 0.10) <= kHandTolerance, "ece " + fmt(e));
  const double f1 = f1_macro(std::vector<std::size_t>{1, 1, 1, 1}, std::vector<std::size_t>{0, 0, 1, 1}, 2);
  out.require(std::abs(f1 - 1.0 / 3.0) <= kHandTolerance, "macro f1 " + fmt(f1));
  for (std::size_t O : {2u, 5u, 10u}) {
    ProbabilityMatrix u{std::vector<double>(3 * O, 1.0 / static_cast<double>(O)), O};
    const double nll = nll_classification(u, std::vector<std::size_t>{0, O - 1, 1});
    out.require(std::abs(nll - std::log(static_cast<double>(O))) <= kAnalyticTolerance, "uniform nll at O=" + std::to_string(O));
  }
  std::vector<double> mu{0.5, -1.0}, var{1.0, 1.0};
  const double g = gaussian_nll(mu, var, mu);
  out.require(std::abs(g - 0.5 * std::log(2.0 * std::numbers::pi)) <= kAnalyticTolerance, "gaussian nll " + fmt(g));
  out.note("ece " + fmt(e) + ", f1 " + fmt(f1) + ", gaussian nll " + fmt(g));
  return out;
}

// 10 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome out;
  const fs::path root = fs::temp_directory_path() / "sae_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  save_csv((root / "data.csv").string(), gen_data(DataKind::spirals, 300, 0.05, 17));

  std::vector<std::string> logs, checkpoints, train_metrics, eval_metrics;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    fs::create_directories(dir);
    std::ostringstream cfg;
    cfg << "[model]\nN = 2\nK = 2\nD = 3\nwidth = 16\nseed = 4\n"
        << "[schedule]\nalpha_start = 0.5\ntemperature_end = 0.2\nrepetition_start = 0.3\n"
        << "[trainer]\nlearning_rate = 0.003\nsteps = 300\nbatch_size = 32\nlog_interval = 25\nseed = 9\n"
        << "[data]\nkind = csv\npath = " << (root / "data.csv").string() << '\n'
        << "[output]\ncheckpoint = " << (dir / "model.ckpt").string() << "\nlog = " << (dir / "train.jsonl").string()
        << "\nmetrics = " << (dir / "metrics.json").string() << '\n';
    run_training(parse_config(cfg.str()));
    logs.push_back(slurp(dir / "train.jsonl"));
    checkpoints.push_back(slurp(dir / "model.ckpt"));
    train_metrics.push_back(slurp(dir / "metrics.json"));
    eval_metrics.push_back(run_evaluation((dir / "model.ckpt").string(), (root / "data.csv").string()).dump());
  }
  out.require(!logs[0].empty() && logs[0] == logs[1], "training logs identical");
  out.require(!checkpoints[0].empty() && checkpoints[0] == checkpoints[1], "checkpoints identical");
  out.require(!train_metrics[0].empty() && train_metrics[0] == train_metrics[1], "training metrics identical");
  out.require(eval_metrics[0] == eval_metrics[1], "evaluation metrics identical");
  out.note(std::to_string(logs[0].size() + checkpoints[0].size() + eval_metrics[0].size()) + " bytes compared");
  fs::remove_all(root);
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"objective decomposition", objective_decomposition},
      {"KL correctness", kl_correctness},
      {"sampler statistics", sampler_statistics},
      {"cost-oracle equality", cost_oracles},
      {"taxonomy", taxonomy},
      {"desk-scale training", desk_scale_training},
      {"evaluation semantics", evaluation_semantics},
      {"metric suite", metric_suite},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << i + 1 << "  " << std::left << std::setw(24)
              << criteria[i].first << std::right << " [" << std::fixed << std::setprecision(2) << secs << " s]"
              << std::defaultfloat;
    for (const auto& n : o.notes) std::cout << "  " << n << ';';
    std::cout << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}

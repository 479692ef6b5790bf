#include "circuit/ablation.hpp"
#include "circuit/error.hpp"
#include "circuit/eval.hpp"
#include "circuit/forward.hpp"

#include <doctest.h>
#include <json.hpp>

#include "toy.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

using namespace circuit;
using doctest::Contains;

namespace {

const std::filesystem::path kData = CIRCUIT_DATA_DIR;

ReferenceCircuit reference(HeadSet heads) {
  ReferenceCircuit r;
  r.task = "toy";
  r.heads = std::move(heads);
  return r;
}

// All logits equal: every candidate ties.
Model flat_model(const Model& m) {
  auto parts = m.parts();
  parts.unembedding = std::make_shared<const Matrix>(Matrix::Zero(m.config().d_model, m.config().vocab_size));
  return Model(std::move(parts));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("accuracy of a model against its own predictions") {
  const auto f = toy::random_model(toy::config(), 5);
  auto samples = toy::random_samples(f.config(), 9, 5, 1);
  const Matrix last = hooked_forward_last(f, {}, to_token_matrix(samples));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Eigen::Index arg = 0;
    last.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    samples[i].answer_token = static_cast<int>(arg);
  }
  CHECK(evaluate_accuracy(f, samples, TaskKind::acronyms) == 100.0);
  for (auto& s : samples) s.answer_token = (s.answer_token + 1) % f.config().vocab_size;
  CHECK(evaluate_accuracy(f, samples, TaskKind::acronyms) == 0.0);
  CHECK_THROWS_AS(evaluate_accuracy(f, {}, TaskKind::acronyms), DatasetError);
}

TEST_CASE("ties are not correct for IOI") {
  const auto flat = flat_model(toy::random_model(toy::config(), 6));
  auto samples = toy::random_samples(flat.config(), 6, 5, 2);
  for (auto& s : samples) {
    s.answer_token = 3;
    s.distractor_token = 4;
  }
  CHECK(evaluate_accuracy(flat, samples, TaskKind::ioi) == 0.0);
}

TEST_CASE("compare_circuit") {
  const auto ref = reference({{0, 0}, {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 4}, {5, 5}, {6, 6}});
  CHECK(compare_circuit(ref.heads, ref, 144).tpr == 100.0);
  CHECK(compare_circuit(ref.heads, ref, 144).fpr == 0.0);
  CHECK(compare_circuit({}, ref, 144).tpr == 0.0);
  CHECK(compare_circuit({}, ref, 144).fpr == 0.0);
  const auto partial = compare_circuit({{0, 0}, {0, 1}, {1, 2}, {9, 9}, {9, 10}}, ref, 144);
  CHECK(partial.tpr == 37.5);
  CHECK(partial.fpr == doctest::Approx(100.0 * 2.0 / 136.0));
  HeadSet everything;
  for (int l = 0; l < 12; ++l)
    for (int h = 0; h < 12; ++h) everything.emplace(l, h);
  CHECK(compare_circuit(everything, ref, 144).fpr == 100.0);
  CHECK_THROWS_AS(compare_circuit({}, reference({}), 144), ConfigError);
  CHECK_THROWS_AS(compare_circuit({}, ref, 8), ConfigError);
}

TEST_CASE("shipped reference circuits") {
  const auto gt = ReferenceCircuit::load(kData / "reference" / "greater_than.json");
  const auto ac = ReferenceCircuit::load(kData / "reference" / "acronyms.json");
  const auto ioi = ReferenceCircuit::load(kData / "reference" / "ioi.json");
  CHECK(gt.heads.size() == 8);
  CHECK(ac.heads.size() == 8);
  CHECK(ioi.heads.size() == 26);
  CHECK(gt.heads.count({9, 1}));
  CHECK(ac.heads.count({10, 10}));
  const ModelConfig gpt2{12, 12, 768, 64, 3072, 50257, 1024, 1e-5f};
  for (const auto* r : {&gt, &ac, &ioi}) {
    CHECK_NOTHROW(r->validate(gpt2));
    CHECK(r->provisional);
  }
  CHECK_THROWS_WITH_AS(reference({{12, 0}}).validate(gpt2), Contains("12.0"), ConfigError);
  CHECK_THROWS_WITH_AS(ReferenceCircuit::from_json(nlohmann::json::parse(R"({"task":"x","heads":[[1,2],[1,2]]})")),
                       Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(ReferenceCircuit::load(kData / "reference" / "missing.json"), ConfigError);
}

TEST_CASE("roc curve") {
  const std::vector<RocPoint> perfect{{0.0, 100.0}, {50.0, 100.0}};
  CHECK(roc_curve(perfect).auc == doctest::Approx(1.0));
  const std::vector<RocPoint> diagonal{{20.0, 20.0}, {70.0, 70.0}};
  CHECK(roc_curve(diagonal).auc == doctest::Approx(0.5));
  const std::vector<RocPoint> a{{10.0, 40.0}, {60.0, 90.0}, {30.0, 50.0}}, b{{60.0, 90.0}, {30.0, 50.0}, {10.0, 40.0}};
  const auto ca = roc_curve(a), cb = roc_curve(b);
  CHECK(ca.auc == cb.auc);
  CHECK(ca.points == cb.points);
  CHECK(ca.points.front() == RocPoint{10.0, 40.0});
  const std::vector<RocPoint> one{{1.0, 2.0}};
  CHECK_THROWS_AS(roc_curve(one), ConfigError);
}

TEST_CASE("random circuits give chance AUC") {
  std::mt19937_64 rng(99);
  const auto ref = reference({{0, 0}, {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 4}, {5, 5}, {6, 6}});
  std::vector<std::pair<int, int>> heads;
  for (int l = 0; l < 12; ++l)
    for (int h = 0; h < 12; ++h) heads.emplace_back(l, h);
  double total = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<HeadSet> sets;
    for (int p = 0; p < 8; ++p) {
      std::shuffle(heads.begin(), heads.end(), rng);
      const auto k = std::uniform_int_distribution<std::size_t>(0, heads.size())(rng);
      sets.emplace_back(heads.begin(), heads.begin() + static_cast<std::ptrdiff_t>(k));
    }
    total += roc_points(sets, ref, 144).auc;
  }
  CHECK(std::abs(total / trials - 0.5) < 0.1);
}

TEST_CASE("aggregate") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto a = aggregate(v);
  CHECK(a.mean == 2.5);
  CHECK(a.stddev == doctest::Approx(1.2909944487358056));
  CHECK(a.count == 4);
  const std::vector<double> one{7.0};
  CHECK(aggregate(one).stddev == 0.0);
}

TEST_CASE("benchmark_time") {
  const auto f = toy::random_model(toy::config(), 7);
  const auto t = toy::random_tokens(f.config(), 4, 8, 1);
  const auto s = benchmark_time(f, t, 3, 2);
  CHECK(s.repetitions == 3);
  CHECK(s.mean_ms > 0.0);
  CHECK(s.median_ms > 0.0);
  CHECK(s.stddev_ms >= 0.0);
  CHECK_THROWS_WITH_AS(benchmark_time(f, t, 2), Contains("3 repetitions"), ConfigError);
  CHECK_THROWS_AS(benchmark_time(f, t, 3, 0), ConfigError);
}

TEST_CASE("report output") {
  EvalReport r;
  r.task = "acronyms";
  r.label = "pruned";
  r.alpha = 0.0886;
  r.include_mlps = false;
  r.repetitions = 5;
  const std::vector<double> acc{90.0, 92.0};
  r.accuracy = aggregate(acc);
  r.params = 57202560;
  r.delta_param = 32.75;
  const std::string row = csv_row(r);
  CHECK(row.rfind("acronyms,pruned,0.0886,no,5,91,", 0) == 0);
  CHECK(row.find(",5.720256,32.75,") != std::string::npos);
  const std::string header = csv_header();
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));

  const auto dir = toy::temp_dir("report");
  const std::vector<EvalReport> reports{r};
  write_reports_csv(reports, dir / "r.csv");
  CHECK(slurp(dir / "r.csv") == csv_header() + "\n" + row + "\n");
  write_reports_json(reports, dir / "r.json");
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  CHECK(j.at(0).at("params") == 57202560);
  CHECK(j.at(0).at("time_ms").is_null());
  CHECK(j.at(0).at("accuracy").at("mean") == 91.0);

  RocCurve c = roc_curve(std::vector<RocPoint>{{0.0, 50.0}, {25.0, 75.0}});
  write_roc_csv(c, dir / "roc.csv");
  CHECK(slurp(dir / "roc.csv") == "fpr,tpr\n0,50\n25,75\n");
}

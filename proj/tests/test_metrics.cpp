#include <doctest.h>

#include <cmath>
#include <vector>

#include "cfl/errors.hpp"
#include "cfl/metrics.hpp"
#include "cfl/rng.hpp"

using namespace cfl;

namespace {

// A logistic-regression setup whose prediction we can steer per sample: one
// feature equal to the desired logit, weight 1, bias 0.
ModelSpec logit_passthrough_spec() {
  ModelSpec spec;
  spec.architecture = Architecture::LogisticRegression;
  spec.input_dim = 1;
  spec.loss = LossSpec{LossKind::CrossEntropy, 1.0, 0.0};
  return spec;
}

Dataset logit_dataset(const std::vector<std::pair<double, int>>& logit_label,
                      const std::vector<std::string>& tags = {}) {
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < logit_label.size(); ++i) {
    Sample s;
    s.features = {logit_label[i].first};
    s.label = logit_label[i].second;
    s.modality_tag = tags.empty() ? "only" : tags[i];
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), 1);
}

const ParameterVector kIdentityParams(std::vector<double>{1.0, 0.0});

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("f1 is the harmonic mean, checked against a brute-force oracle") {
  Rng rng(515);
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix m;
    m.tp = static_cast<long>(rng.bounded(50));
    m.fp = static_cast<long>(rng.bounded(50));
    m.tn = static_cast<long>(rng.bounded(50));
    m.fn = static_cast<long>(rng.bounded(50));
    if (m.total() == 0) continue;

    const ClassMetrics got = metrics_from_confusion(m);
    // Oracle: independent recomputation from the counts.
    const double p = m.tp + m.fp > 0 ? double(m.tp) / double(m.tp + m.fp) : 0.0;
    const double r = m.tp + m.fn > 0 ? double(m.tp) / double(m.tp + m.fn) : 0.0;
    const double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    CHECK(got.precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(got.recall == doctest::Approx(r).epsilon(1e-12));
    CHECK(got.f1 == doctest::Approx(f1).epsilon(1e-12));
    CHECK(got.zero_division == (m.tp + m.fp == 0 || m.tp + m.fn == 0 || p + r == 0.0));
  }
}

TEST_CASE("zero-denominator metrics are 0 with a flag, never NaN") {
  const ClassMetrics m = metrics_from_confusion(ConfusionMatrix{0, 0, 10, 0});
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.zero_division);
}

TEST_CASE("perfect classifier scores 1.0 everywhere") {
  const auto test = logit_dataset({{8, 1}, {9, 1}, {-8, 0}, {-9, 0}, {-7, 0}});
  const EvalReport report = evaluate(logit_passthrough_spec(), kIdentityParams, test);
  CHECK(report.covid.precision == 1.0);
  CHECK(report.covid.recall == 1.0);
  CHECK(report.covid.f1 == 1.0);
  CHECK(report.healthy.precision == 1.0);
  CHECK(report.healthy.recall == 1.0);
  CHECK(report.healthy.f1 == 1.0);
  CHECK(report.accuracy == 1.0);
  CHECK(report.macro_f1 == 1.0);
}

TEST_CASE("all-positive predictor on an 80/30 test set") {
  // Ultrasound-like test composition: 80 positives, 30 negatives.
  std::vector<std::pair<double, int>> samples;
  for (int i = 0; i < 80; ++i) samples.push_back({5.0, 1});
  for (int i = 0; i < 30; ++i) samples.push_back({5.0, 0});
  const EvalReport report =
      evaluate(logit_passthrough_spec(), kIdentityParams, logit_dataset(samples));
  CHECK(report.covid.recall == 1.0);
  CHECK(report.covid.precision == doctest::Approx(80.0 / 110.0).epsilon(1e-12));
  CHECK(report.healthy.recall == 0.0);
  CHECK(report.confusion == ConfusionMatrix{80, 30, 0, 0});
}

TEST_CASE("threshold boundaries pin the all-positive and all-negative predictors") {
  const auto test = logit_dataset({{2, 1}, {-2, 0}, {-1, 1}, {1, 0}});
  const EvalReport all_positive = evaluate(logit_passthrough_spec(), kIdentityParams, test, 0.0);
  CHECK(all_positive.confusion.tp + all_positive.confusion.fp == 4);
  const EvalReport all_negative =
      evaluate(logit_passthrough_spec(), kIdentityParams, test, 1.0 + 1e-9);
  CHECK(all_negative.confusion.tn + all_negative.confusion.fn == 4);
}

TEST_CASE("accuracy equals (tp+tn)/total") {
  const auto test = logit_dataset({{3, 1}, {-3, 1}, {-3, 0}, {3, 0}, {3, 1}});
  const EvalReport report = evaluate(logit_passthrough_spec(), kIdentityParams, test);
  const auto& m = report.confusion;
  CHECK(report.accuracy ==
        doctest::Approx(double(m.tp + m.tn) / double(m.total())).epsilon(1e-15));
  CHECK(m.total() == 5);
}

TEST_CASE("per-modality confusion matrices sum to the global one") {
  const auto test = logit_dataset({{3, 1}, {-3, 0}, {-2, 1}, {2, 0}, {4, 1}, {-4, 0}},
                                  {"xray", "xray", "xray", "us", "us", "us"});
  const EvalReport report = evaluate(logit_passthrough_spec(), kIdentityParams, test);
  REQUIRE(report.per_modality.size() == 2);
  ConfusionMatrix sum;
  for (const ModalityReport& m : report.per_modality) sum += m.confusion;
  CHECK(sum == report.confusion);
  CHECK(report.per_modality[0].tag == "xray");
  CHECK(report.per_modality[1].tag == "us");
}

TEST_CASE("combine_reports rebuilds the joint report") {
  const auto xray = logit_dataset({{3, 1}, {-3, 0}, {-2, 1}}, {"xray", "xray", "xray"});
  const auto us = logit_dataset({{2, 0}, {4, 1}, {-4, 0}}, {"us", "us", "us"});
  const auto spec = logit_passthrough_spec();
  const EvalReport a = evaluate(spec, kIdentityParams, xray);
  const EvalReport b = evaluate(spec, kIdentityParams, us);
  const EvalReport joint = combine_reports(std::vector<EvalReport>{a, b});

  ConfusionMatrix expected = a.confusion;
  expected += b.confusion;
  CHECK(joint.confusion == expected);
  CHECK(joint.per_modality.size() == 2);
  const double expected_loss = (a.mean_loss * 3 + b.mean_loss * 3) / 6.0;
  CHECK(joint.mean_loss == doctest::Approx(expected_loss).epsilon(1e-12));
}

TEST_CASE("weighted averages use class support") {
  std::vector<std::pair<double, int>> samples;
  for (int i = 0; i < 9; ++i) samples.push_back({5.0, 1});
  samples.push_back({5.0, 0});  // one healthy sample, misclassified
  const EvalReport report =
      evaluate(logit_passthrough_spec(), kIdentityParams, logit_dataset(samples));
  CHECK(report.weighted_f1 ==
        doctest::Approx(0.9 * report.covid.f1 + 0.1 * report.healthy.f1).epsilon(1e-12));
  CHECK(report.macro_f1 ==
        doctest::Approx(0.5 * (report.covid.f1 + report.healthy.f1)).epsilon(1e-12));
}

TEST_CASE("detect_inflection: strictly decreasing sequence never fires") {
  const std::vector<double> losses = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  CHECK(!detect_inflection(losses, 2, 1e-4).has_value());
}

TEST_CASE("detect_inflection: hand-traced patience counter") {
  const std::vector<double> losses = {1.0, 0.9, 0.8, 0.85, 0.86, 0.87};
  const auto result = detect_inflection(losses, 2, 1e-4);
  REQUIRE(result.has_value());
  CHECK(result->best_index == 2);
  CHECK(result->triggered_index == 4);
}

TEST_CASE("detect_inflection: constant sequence fires immediately") {
  const std::vector<double> losses = {0.5, 0.5, 0.5};
  const auto result = detect_inflection(losses, 1, 1e-4);
  REQUIRE(result.has_value());
  CHECK(result->best_index == 0);
  CHECK(result->triggered_index == 1);
}

TEST_CASE("detect_inflection: improvements below min_delta count as stale") {
  const std::vector<double> losses = {1.0, 0.99999, 0.99998, 0.99997};
  const auto result = detect_inflection(losses, 3, 1e-4);
  REQUIRE(result.has_value());
  CHECK(result->best_index == 0);
  CHECK(result->triggered_index == 3);
}

TEST_CASE("evaluate rejects an inconsistent setup") {
  const auto test = logit_dataset({{1, 1}, {-1, 0}});
  ModelSpec wrong = logit_passthrough_spec();
  wrong.input_dim = 2;
  CHECK_THROWS_AS(evaluate(wrong, kIdentityParams, test), DimensionError);
}

}  // TEST_SUITE

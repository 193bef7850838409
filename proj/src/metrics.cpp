#include "cfl/metrics.hpp"

#include <algorithm>
#include <limits>

#include "cfl/errors.hpp"

namespace cfl {

namespace {

// Fills the summary fields of a report from its confusion matrix, loss sum
// and per-class metrics.
void finalize_report(EvalReport& report, double loss_sum) {
  const ConfusionMatrix& m = report.confusion;
  report.covid = metrics_from_confusion(m);
  report.healthy = metrics_from_confusion(swap_classes(m));
  report.macro_precision = 0.5 * (report.covid.precision + report.healthy.precision);
  report.macro_recall = 0.5 * (report.covid.recall + report.healthy.recall);
  report.macro_f1 = 0.5 * (report.covid.f1 + report.healthy.f1);

  const long total = m.total();
  const long covid_support = m.tp + m.fn;
  const long healthy_support = m.tn + m.fp;
  const double wc = static_cast<double>(covid_support) / static_cast<double>(total);
  const double wh = static_cast<double>(healthy_support) / static_cast<double>(total);
  report.weighted_precision = wc * report.covid.precision + wh * report.healthy.precision;
  report.weighted_recall = wc * report.covid.recall + wh * report.healthy.recall;
  report.weighted_f1 = wc * report.covid.f1 + wh * report.healthy.f1;

  report.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(total);
  report.mean_loss = loss_sum / static_cast<double>(total);
  report.zero_division = report.covid.zero_division || report.healthy.zero_division;
}

void finalize_modality(ModalityReport& modality) {
  modality.covid = metrics_from_confusion(modality.confusion);
  modality.healthy = metrics_from_confusion(swap_classes(modality.confusion));
  modality.macro_f1 = 0.5 * (modality.covid.f1 + modality.healthy.f1);
}

}  // namespace

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  tp += other.tp;
  fp += other.fp;
  tn += other.tn;
  fn += other.fn;
  return *this;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

ClassMetrics metrics_from_confusion(const ConfusionMatrix& m) {
  ClassMetrics out;
  if (m.tp + m.fp > 0) {
    out.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  } else {
    out.zero_division = true;
  }
  if (m.tp + m.fn > 0) {
    out.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  } else {
    out.zero_division = true;
  }
  if (out.precision + out.recall > 0.0) {
    out.f1 = f1_score(out.precision, out.recall);
  } else {
    out.zero_division = true;
  }
  return out;
}

ConfusionMatrix swap_classes(const ConfusionMatrix& m) {
  return ConfusionMatrix{m.tn, m.fn, m.tp, m.fp};
}

EvalReport evaluate(const ModelSpec& spec, const ParameterVector& params, const Dataset& test,
                    double threshold) {
  EvalReport report;
  double loss_sum = 0.0;

  std::vector<std::string> tags = test.distinct_tags();
  report.per_modality.resize(tags.size());
  for (std::size_t t = 0; t < tags.size(); ++t) {
    report.per_modality[t].tag = tags[t];
  }

  for (const Sample& sample : test.samples()) {
    const double p = forward(spec, params, sample.features);
    const int predicted = p >= threshold ? 1 : 0;
    const double loss = spec.loss.kind == LossKind::CrossEntropy
                            ? cross_entropy(p, sample.label)
                            : focal_loss(p, sample.label, spec.loss.alpha, spec.loss.gamma);

    ConfusionMatrix delta;
    if (sample.label == 1) {
      (predicted == 1 ? delta.tp : delta.fn) = 1;
    } else {
      (predicted == 1 ? delta.fp : delta.tn) = 1;
    }
    report.confusion += delta;
    loss_sum += loss;

    const auto t = static_cast<std::size_t>(
        std::find(tags.begin(), tags.end(), sample.modality_tag) - tags.begin());
    report.per_modality[t].confusion += delta;
    report.per_modality[t].loss_sum += loss;
    report.per_modality[t].sample_count += 1;
  }

  for (ModalityReport& modality : report.per_modality) {
    finalize_modality(modality);
  }
  finalize_report(report, loss_sum);
  return report;
}

EvalReport combine_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) {
    throw DataError("nothing to combine");
  }
  EvalReport out;
  double loss_sum = 0.0;
  for (const EvalReport& r : reports) {
    out.confusion += r.confusion;
    loss_sum += r.mean_loss * static_cast<double>(r.confusion.total());
    for (const ModalityReport& modality : r.per_modality) {
      out.per_modality.push_back(modality);
    }
  }
  finalize_report(out, loss_sum);
  return out;
}

std::optional<Inflection> detect_inflection(std::span<const double> losses, int patience,
                                            double min_delta) {
  EarlyStopper stopper(patience, min_delta);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (stopper.observe(losses[i])) {
      return Inflection{stopper.best_index(), i};
    }
  }
  return std::nullopt;
}

EarlyStopper::EarlyStopper(int patience, double min_delta)
    : patience_(patience), min_delta_(min_delta),
      best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience_ < 1) {
    throw ConfigError("early-stop patience must be at least 1");
  }
}

bool EarlyStopper::observe(double loss) {
  const std::size_t index = observed_++;
  if (loss <= best_loss_ - min_delta_) {
    best_loss_ = loss;
    best_index_ = index;
    stale_rounds_ = 0;
    return false;
  }
  return ++stale_rounds_ >= patience_;
}

}  // namespace cfl

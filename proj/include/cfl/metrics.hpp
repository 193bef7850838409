#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfl/data.hpp"
#include "cfl/model.hpp"
#include "cfl/params.hpp"

namespace cfl {

struct ConfusionMatrix {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Precision/recall/F1 with zero-denominator cases reported as 0 and flagged.
struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_division = false;
};

double f1_score(double precision, double recall);

/// Metrics for the positive side of a confusion matrix.
ClassMetrics metrics_from_confusion(const ConfusionMatrix& m);

/// Same matrix viewed with the classes swapped (Healthy as positive).
ConfusionMatrix swap_classes(const ConfusionMatrix& m);

struct ModalityReport {
  std::string tag;
  ConfusionMatrix confusion;  // positive class = COVID-19
  ClassMetrics covid;
  ClassMetrics healthy;
  double macro_f1 = 0.0;
  double loss_sum = 0.0;
  long sample_count = 0;
};

struct EvalReport {
  ConfusionMatrix confusion;  // positive class = COVID-19
  ClassMetrics covid;
  ClassMetrics healthy;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // Support-weighted alternative to the macro averages.
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  bool zero_division = false;
  std::vector<ModalityReport> per_modality;
};

/// Thresholded evaluation on a test set: prediction = 1 iff forward(x) >=
/// threshold. Loss follows the model's LossSpec. Per-modality breakdown comes
/// from the samples' tags.
EvalReport evaluate(const ModelSpec& spec, const ParameterVector& params, const Dataset& test,
                    double threshold = 0.5);

/// Rebuilds a joint report from per-modality pieces by summing confusion
/// matrices and loss sums; used when each modality is scored by its own model.
EvalReport combine_reports(std::span<const EvalReport> reports);

struct Inflection {
  std::size_t best_index;       // round with the last sufficient improvement
  std::size_t triggered_index;  // round at which patience ran out
};

/// Scans a loss sequence for the early-stopping inflection: returns the index
/// of the last round that improved the running best by at least min_delta,
/// once `patience` consecutive non-improving rounds have followed it.
std::optional<Inflection> detect_inflection(std::span<const double> losses, int patience,
                                            double min_delta);

/// Streaming form of detect_inflection for use inside a round loop.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta);

  /// Feeds one round's loss. Returns true when training should stop.
  bool observe(double loss);

  std::size_t best_index() const { return best_index_; }
  double best_loss() const { return best_loss_; }
  std::size_t observed() const { return observed_; }

 private:
  int patience_;
  double min_delta_;
  double best_loss_;
  std::size_t best_index_ = 0;
  std::size_t observed_ = 0;
  int stale_rounds_ = 0;
};

}  // namespace cfl

/**
 * @file verification.hpp
 * @brief Forecast verification: continuous scores (MSE, mean error),
 *        categorical scores from contingency tables (precision, recall,
 *        equitable threat score), motion-field fitness diagnostics, and
 *        CSV evaluation reports over multi-lead rollouts.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lagcast/models.hpp"
#include "lagcast/optical_flow.hpp"
#include "lagcast/tensor.hpp"

namespace lagcast::verify {

/// Joint event counts of a thresholded forecast against thresholded truth.
struct ContingencyTable {
    std::int64_t hits = 0;              ///< forecast >= t, observed >= t
    std::int64_t misses = 0;            ///< forecast <  t, observed >= t
    std::int64_t false_alarms = 0;      ///< forecast >= t, observed <  t
    std::int64_t correct_negatives = 0; ///< forecast <  t, observed <  t

    std::int64_t total() const { return hits + misses + false_alarms + correct_negatives; }
};

/// Counts exceedances of `threshold` cell by cell. Shapes must match.
ContingencyTable contingency(const TensorF& forecast, const TensorF& observed, float threshold);

/// Accumulates `other` into `table`.
void accumulate(ContingencyTable& table, const ContingencyTable& other);

/// Categorical scores. Each returns an empty optional when its denominator
/// vanishes (the score is undefined), never NaN.
std::optional<double> precision(const ContingencyTable& t);
std::optional<double> recall(const ContingencyTable& t);

/// Equitable threat score: hits corrected for chance agreement,
/// (h - h_r) / (h + m + f - h_r) with h_r = (h+m)(h+f)/total.
/// Ranges over [-1/3, 1]; 0 for skill-free forecasts.
std::optional<double> equitable_threat_score(const ContingencyTable& t);

/// Mean squared error and mean error (forecast minus observed), both reduced
/// over every cell. Shapes must match and be non-empty.
double mse(const TensorF& forecast, const TensorF& observed);
double mean_error(const TensorF& forecast, const TensorF& observed);

/// Rain-rate thresholds (mm/h) used by the standard reports.
std::vector<float> default_thresholds();

/// Scores of one model at one lead, pooled over an evaluation set.
struct LeadScores {
    int lead = 0;  ///< 1-based forecast step
    double mse = 0.0;
    double mean_error = 0.0;
    struct Categorical {
        float threshold = 0.0f;
        std::optional<double> precision;
        std::optional<double> recall;
        std::optional<double> ets;
    };
    std::vector<Categorical> categorical;
};

struct EvaluationReport {
    std::string model_name;
    int step_minutes = 5;
    std::vector<LeadScores> leads;
};

struct EvaluateOptions {
    int leads = 6;
    int step_minutes = 5;
    std::vector<float> thresholds = default_thresholds();
};

/// Rolls the model over every window of the evaluation set (the first
/// `model.config().window` planes are inputs, subsequent planes are the
/// observed leads) and pools scores per lead. Windows are expected in
/// network space; scores are computed in rain space (mm/h).
EvaluationReport evaluate_model(const models::NowcastModel& model, const std::string& name,
                                const std::vector<TensorF>& windows,
                                const EvaluateOptions& opts = {});

/// Writes `model,lead_minutes,metric,threshold,value` rows: per lead the two
/// continuous scores (empty threshold cell) then precision/recall/ets per
/// threshold. Undefined scores leave the value cell empty.
void write_scores_csv(const std::string& path, const std::vector<EvaluationReport>& reports);

/// Motion-quality diagnostics for one motion source at one lead: mean |div u|
/// over rainy cells (last observed frame >= 0.1 mm/h; empty when nothing is
/// rainy) and the MSE of source-free extrapolation, in rain space.
struct MotionLeadFitness {
    int lead = 0;
    std::optional<double> mean_abs_divergence;
    double extrapolation_mse = 0.0;
};

struct MotionFitnessReport {
    std::string source;
    int step_minutes = 5;
    std::vector<MotionLeadFitness> leads;
};

/// Fitness of a learned motion model: source-free rollout, the motion field
/// regenerated from the shifted window at every lead.
MotionFitnessReport motion_fitness(const models::NowcastModel& model, const std::string& source,
                                   const std::vector<TensorF>& windows, int leads = 6);

/// Fitness of pyramidal feature-tracking flow: one field diagnosed from the
/// first `input_frames` planes of each window and reused across all leads.
MotionFitnessReport motion_fitness_lk(const flow::PyramidConfig& cfg, const std::string& source,
                                      const std::vector<TensorF>& windows, float norm_scale,
                                      int input_frames = 6, int leads = 6);

/// Writes `source,lead_minutes,metric,value` rows for each report.
void write_motion_csv(const std::string& path, const std::vector<MotionFitnessReport>& reports);

}  // namespace lagcast::verify

#pragma once

#include "subnetens/trainer.hpp"

#include <string>
#include <vector>

namespace subnetens {

/// Per-member per-sample class probabilities plus the true labels.
struct PredictionMatrix {
    std::vector<Eigen::MatrixXd> members;  // each samples x classes
    Labels labels;

    int member_count() const { return static_cast<int>(members.size()); }
    void validate() const;  // every row on the simplex within 1e-6
};

/// Arithmetic mean over members (ensemble aggregation).
Eigen::MatrixXd aggregate(const PredictionMatrix& preds);

double accuracy(const Eigen::MatrixXd& probs, const Labels& labels);

/// Mean negative log-probability of the true class; probabilities are clamped
/// to [1e-12, 1] before the log.
double nll(const Eigen::MatrixXd& probs, const Labels& labels);

/// Expected calibration error over equal-width confidence bins on the max
/// probability. Bin b covers (b/B, (b+1)/B]; confidence 0 lands in bin 0.
double ece(const Eigen::MatrixXd& probs, const Labels& labels, int bins = 15);

namespace detail {
/// Bin placement shared with the report; edge values go to the lower-indexed
/// covering bin by the half-open interval rule above.
int ece_bin(double confidence, int bins);
}  // namespace detail

/// Kuncheva's inter-rater agreement kappa over member correctness patterns;
/// lower means more diverse members. Degenerate mean accuracy (0 or 1) returns 1.
double interrater_agreement(const PredictionMatrix& preds);

std::vector<double> per_member_accuracy(const PredictionMatrix& preds);

/// Eval-mode forward in float, probabilities in double, batched internally.
Eigen::MatrixXd predict_probs(const WeightStore<float>& store, const Matrix<float>& x,
                              const Mask* mask = nullptr, float scale = 1.0f, int subnet = 0);

/// One row set per forward pass, each with a fresh Bernoulli keep-mask at the
/// bundle's dropout rate.
PredictionMatrix mc_dropout_predict(const ModelBundle& bundle, const Matrix<float>& x,
                                    const Labels& labels, int passes, std::uint64_t seed);

/// Member predictions for any bundle kind: subnetworks for orthogonal bundles,
/// dropout passes for mc bundles, one deterministic pass otherwise.
PredictionMatrix member_predictions(const ModelBundle& bundle, const Matrix<float>& x,
                                    const Labels& labels, int mc_passes, std::uint64_t seed);
PredictionMatrix member_predictions(const std::vector<ModelBundle>& ensemble,
                                    const Matrix<float>& x, const Labels& labels);

struct EvalReport {
    std::string method;
    int members = 0;
    double ensemble_accuracy = 0;
    std::vector<double> member_accuracy;
    double mean_member_accuracy = 0;
    double nll = 0;
    double ece = 0;
    int ece_bins = 15;
    double ia = 0;
    bool has_ia = false;
    Index param_count = 0;      // shared weights, identical across subnetwork counts
    Index aux_param_count = 0;  // per-subnetwork bias and batchnorm replicas

    std::string to_kv() const;
    static EvalReport from_kv(const std::string& text);
};

EvalReport evaluate(const ModelBundle& bundle, const Dataset& ds, int mc_passes = 30,
                    std::uint64_t seed = 1);
EvalReport evaluate(const std::vector<ModelBundle>& ensemble, const Dataset& ds);

struct SweepRow {
    int k = 0;
    bool ok = false;
    std::string error;
    EvalReport report;
};

struct SweepTable {
    std::vector<SweepRow> rows;
    std::string to_csv() const;
    static SweepTable from_csv(const std::string& text);
};

/// One full orthogonal training plus evaluation per k. A failed cell records its
/// error and the sweep continues.
SweepTable sweep_k(const TrainConfig& base, const Dataset& ds, const std::vector<int>& k_values);

}  // namespace subnetens

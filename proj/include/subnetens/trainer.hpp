#pragma once

#include "subnetens/data.hpp"
#include "subnetens/edgepop.hpp"
#include "subnetens/masks.hpp"
#include "subnetens/network.hpp"
#include "subnetens/sgd.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace subnetens {

enum class TrainMethod { orthogonal, mc_dropout, deep_ensemble };

std::string method_name(TrainMethod m);
TrainMethod method_from_name(const std::string& name);

struct TrainConfig {
    std::string arch;
    int k = 5;                      // subnetworks, or members for deep ensembles
    int pretrain_epochs = 30;       // also the single-phase budget of the baselines
    int finetune_epochs = 30;
    int prune_epochs = 20;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_milestones;
    double lr_decay = 0.1;
    double score_lr = 0.01;
    double score_momentum = 0.9;
    int batch_size = 128;
    bool fixed_classifier = true;
    bool mask_optimization = true;
    double dropout_rate = 0.15;     // mc-dropout baseline; 0 trains deterministically
    int mc_passes = 30;
    std::uint64_t seed = 1;
    bool log_to_stdout = false;

    void validate() const;
    SgdConfig sgd() const { return {lr, momentum, weight_decay, lr_milestones, lr_decay}; }
};

/// The deployable artifact of one training run: shared weights, the mask set for
/// orthogonal runs, per-subnetwork batchnorm/bias variants, and the run metadata.
struct ModelBundle {
    TrainMethod method = TrainMethod::orthogonal;
    WeightStore<float> store;
    std::optional<MaskSet> masks;
    TrainConfig config;
    std::string config_text;    // canonical key=value echo
    std::string training_log;   // line-delimited "key=value ..." records
    std::uint64_t seed = 0;
};

using IterationObserver =
    std::function<void(int subnet, const WeightStore<float>&, const MaskSet&)>;

/// Greedy sequential loop: per subnetwork, reinitialize the available weights,
/// pretrain on them, pick the subnetwork's mask (edge-pop or a random partition
/// slice), claim it, then finetune only the claimed weights with that
/// subnetwork's batchnorm variant and bias set.
ModelBundle train_orthogonal(const TrainConfig& cfg, const Dataset& ds,
                             const IterationObserver& observer = {});

/// Standard training with a fresh Bernoulli weight mask per minibatch, scaled by
/// 1/(1-p) at train time. Rate 0 degenerates to deterministic training.
ModelBundle train_mc_dropout(const TrainConfig& cfg, const Dataset& ds);

/// cfg.k independent trainings with distinct seeds. With fixed_classifier the
/// frozen classifier tensor is shared bit-identically by every member.
/// Members may train on worker threads, capped by SUBNETENS_THREADS.
std::vector<ModelBundle> train_deep_ensemble(const TrainConfig& cfg, const Dataset& ds);

}  // namespace subnetens

#include "subnetens/trainer.hpp"

#include <cstdlib>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

namespace subnetens {
namespace {

constexpr std::uint64_t kPhasePretrain = 101;
constexpr std::uint64_t kPhaseFinetune = 102;
constexpr std::uint64_t kPhasePrune = 103;
constexpr std::uint64_t kPhaseBaseline = 104;

struct PhaseLog {
    std::string method;
    std::ostringstream lines;
    bool echo = false;

    void record(int subnet, const char* phase, int epoch, double loss, double acc) {
        std::ostringstream os;
        os << "method=" << method << " subnet=" << subnet + 1 << " phase=" << phase
           << " epoch=" << epoch + 1 << " split=train loss=" << loss << " acc=" << acc;
        lines << os.str() << "\n";
        if (echo) std::cout << os.str() << "\n";
    }
};

double batch_accuracy(const Matrix<float>& logits, const Labels& y, Index offset_correct = 0) {
    Index correct = offset_correct;
    for (Index i = 0; i < logits.rows(); ++i) {
        Index arg;
        logits.row(i).maxCoeff(&arg);
        correct += arg == y[i];
    }
    return static_cast<double>(correct);
}

struct PhaseSpec {
    const Mask* forward_mask = nullptr;  // null trains the dense network
    const Mask* ownership = nullptr;
    int subnet = 0;
    int epochs = 0;
    std::uint64_t phase_tag = 0;
    const char* name = "train";
    double dropout_rate = 0.0;           // > 0 samples a fresh keep-mask per batch
};

void run_phase(WeightStore<float>& store, const Dataset& ds, const TrainConfig& cfg,
               const PhaseSpec& phase, PhaseLog& log) {
    if (phase.epochs == 0) return;
    SgdState<float> sgd(cfg.sgd(), store);
    const Index n = ds.train_size();
    if (n == 0) throw ConfigError("cannot train on an empty dataset");
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    const MaskLayout layout = store.maskable_layout();

    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
        sgd.epoch = epoch;
        auto shuffle_rng = make_rng(cfg.seed, {kStreamShuffle, phase.phase_tag,
                                               static_cast<std::uint64_t>(phase.subnet),
                                               static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0;
        double correct = 0;
        Index seen = 0;
        for (Index start = 0; start < n; start += cfg.batch_size) {
            const Index b = std::min<Index>(cfg.batch_size, n - start);
            Matrix<float> x(b, ds.train_x.cols());
            Labels y(b);
            for (Index r = 0; r < b; ++r) {
                x.row(r) = ds.train_x.row(order[start + r]);
                y[r] = ds.train_y[order[start + r]];
            }

            Mask dropout_mask;
            MaskApply<float> ma{phase.forward_mask, 1.0f};
            if (phase.dropout_rate > 0) {
                auto mask_rng = make_rng(cfg.seed, {kStreamDropoutMask, phase.phase_tag,
                                                    static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(start)});
                dropout_mask = bernoulli_mask(layout, 1.0 - phase.dropout_rate, mask_rng);
                ma.mask = &dropout_mask;
                ma.scale = static_cast<float>(1.0 / (1.0 - phase.dropout_rate));
            }

            ForwardCache<float> cache;
            auto logits = forward(store, x, ma, phase.subnet, FwdMode::train, &cache);
            auto grads = backward(store, cache, y);
            sgd_step(store, grads, sgd, phase.subnet, phase.ownership);

            loss_sum += static_cast<double>(grads.loss) * b;
            correct = batch_accuracy(logits, y, static_cast<Index>(correct));
            seen += b;
        }
        log.record(phase.subnet, phase.name, epoch, loss_sum / seen,
                   correct / static_cast<double>(seen));
    }
}

unsigned worker_cap() {
    unsigned cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("SUBNETENS_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) cap = static_cast<unsigned>(v);
    }
    return cap;
}

}  // namespace

std::string method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::orthogonal: return "orthogonal";
        case TrainMethod::mc_dropout: return "mc-dropout";
        case TrainMethod::deep_ensemble: return "deep-ensemble";
    }
    return "?";
}

TrainMethod method_from_name(const std::string& name) {
    if (name == "orthogonal") return TrainMethod::orthogonal;
    if (name == "mc-dropout") return TrainMethod::mc_dropout;
    if (name == "deep-ensemble") return TrainMethod::deep_ensemble;
    throw ConfigError("unknown training method '" + name + "'");
}

void TrainConfig::validate() const {
    if (arch.empty()) throw ConfigError("missing architecture");
    if (k < 1) throw ConfigError("k must be at least 1");
    if (pretrain_epochs < 0 || finetune_epochs < 0 || prune_epochs < 0)
        throw ConfigError("epoch counts must be non-negative");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (!(score_lr > 0)) throw ConfigError("score learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout rate must be in [0,1)");
    if (mc_passes < 1) throw ConfigError("mc_passes must be at least 1");
}

ModelBundle train_orthogonal(const TrainConfig& cfg, const Dataset& ds,
                             const IterationObserver& observer) {
    cfg.validate();
    auto arch = parse_arch(cfg.arch);
    if (arch.class_count < ds.class_count)
        throw ConfigError("architecture has fewer classes than the dataset");

    ModelBundle bundle;
    bundle.method = TrainMethod::orthogonal;
    bundle.config = cfg;
    bundle.seed = cfg.seed;
    bundle.store = init_network<float>(arch, cfg.k, cfg.fixed_classifier, cfg.seed, cfg.seed);
    WeightStore<float>& store = bundle.store;

    const MaskLayout layout = store.maskable_layout();
    MaskSet set = make_mask_set(layout, cfg.k);
    std::optional<MaskSet> partition;
    if (!cfg.mask_optimization) partition = random_orthogonal_partition(layout, cfg.k, cfg.seed);

    PhaseLog log{method_name(bundle.method), {}, cfg.log_to_stdout};
    for (int i = 0; i < cfg.k; ++i) {
        try {
            Mask avail = availability(set, i);
            reinit_available(store, avail,
                             mix_seed(cfg.seed, {kStreamReinit, static_cast<std::uint64_t>(i)}));

            PhaseSpec pretrain{&avail, &avail, i, cfg.pretrain_epochs, kPhasePretrain, "pretrain"};
            run_phase(store, ds, cfg, pretrain, log);

            Mask mask_i;
            if (cfg.mask_optimization) {
                PruneConfig prune;
                prune.epochs = cfg.prune_epochs;
                prune.score_lr = cfg.score_lr;
                prune.score_momentum = cfg.score_momentum;
                prune.batch_size = cfg.batch_size;
                prune.subnet = i;
                prune.quotas = quota_table(layout, cfg.k, i);
                prune.seed = mix_seed(cfg.seed, {kPhasePrune, static_cast<std::uint64_t>(i)});
                mask_i = optimize_mask(store, avail, prune, ds.train_x, ds.train_y);
            } else {
                mask_i = partition->masks[i];
            }
            claim(set, i, mask_i);

            PhaseSpec finetune{&set.masks[i], &set.masks[i], i, cfg.finetune_epochs,
                               kPhaseFinetune, "finetune"};
            run_phase(store, ds, cfg, finetune, log);
        } catch (const NumericError& e) {
            throw NumericError("training of subnetwork " + std::to_string(i + 1) +
                               " diverged: " + e.what());
        }
        if (observer) observer(i, store, set);
    }

    bundle.masks = std::move(set);
    bundle.training_log = log.lines.str();
    return bundle;
}

ModelBundle train_mc_dropout(const TrainConfig& cfg, const Dataset& ds) {
    cfg.validate();
    auto arch = parse_arch(cfg.arch);
    if (arch.class_count < ds.class_count)
        throw ConfigError("architecture has fewer classes than the dataset");

    ModelBundle bundle;
    bundle.method = TrainMethod::mc_dropout;
    bundle.config = cfg;
    bundle.seed = cfg.seed;
    bundle.store = init_network<float>(arch, 1, cfg.fixed_classifier, cfg.seed, cfg.seed);

    PhaseLog log{method_name(bundle.method), {}, cfg.log_to_stdout};
    PhaseSpec phase;
    phase.epochs = cfg.pretrain_epochs;
    phase.phase_tag = kPhaseBaseline;
    phase.dropout_rate = cfg.dropout_rate;
    run_phase(bundle.store, ds, cfg, phase, log);
    bundle.training_log = log.lines.str();
    return bundle;
}

std::vector<ModelBundle> train_deep_ensemble(const TrainConfig& cfg, const Dataset& ds) {
    cfg.validate();
    const int n = cfg.k;
    std::vector<ModelBundle> members(n);
    std::vector<std::string> errors(n);

    auto train_member = [&](int j) {
        try {
            TrainConfig member_cfg = cfg;
            member_cfg.seed = mix_seed(cfg.seed, {kStreamMember, static_cast<std::uint64_t>(j)});
            member_cfg.dropout_rate = 0.0;
            auto arch = parse_arch(cfg.arch);
            ModelBundle bundle;
            bundle.method = TrainMethod::deep_ensemble;
            bundle.config = member_cfg;
            bundle.seed = member_cfg.seed;
            // a fixed classifier is drawn from the shared seed so members carry
            // the identical frozen tensor
            std::uint64_t classifier_seed = cfg.fixed_classifier ? cfg.seed : member_cfg.seed;
            bundle.store = init_network<float>(arch, 1, cfg.fixed_classifier, member_cfg.seed,
                                               classifier_seed);
            PhaseLog log{method_name(bundle.method), {}, cfg.log_to_stdout};
            PhaseSpec phase;
            phase.epochs = cfg.pretrain_epochs;
            phase.phase_tag = kPhaseBaseline;
            phase.subnet = 0;
            run_phase(bundle.store, ds, member_cfg, phase, log);
            bundle.training_log = log.lines.str();
            members[j] = std::move(bundle);
        } catch (const std::exception& e) {
            errors[j] = e.what();
        }
    };

    const unsigned cap = worker_cap();
    if (cap <= 1 || n == 1) {
        for (int j = 0; j < n; ++j) train_member(j);
    } else {
        for (int base = 0; base < n; base += static_cast<int>(cap)) {
            std::vector<std::thread> pool;
            for (int j = base; j < std::min(n, base + static_cast<int>(cap)); ++j)
                pool.emplace_back(train_member, j);
            for (auto& t : pool) t.join();
        }
    }
    for (int j = 0; j < n; ++j)
        if (!errors[j].empty())
            throw NumericError("ensemble member " + std::to_string(j + 1) +
                               " failed: " + errors[j]);
    return members;
}

}  // namespace subnetens

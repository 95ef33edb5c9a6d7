#include "subnetens/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace subnetens {
namespace {

std::string trim(std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
}

std::string fmt_real(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

KvConfig KvConfig::parse_string(const std::string& text) {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        cfg.kv_[key] = val;
    }
    return cfg;
}

std::string KvConfig::get_str(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
}

long KvConfig::get_int(const std::string& key, long def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t used = 0;
        long v = std::stol(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' needs an integer, got '" + it->second + "'");
    }
}

double KvConfig::get_real(const std::string& key, double def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t used = 0;
        double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' needs a number, got '" + it->second + "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' needs a boolean, got '" + v + "'");
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' needs an unsigned integer");
    }
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::istringstream is(it->second);
    std::string part;
    while (std::getline(is, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

void KvConfig::check_known(const std::vector<std::string>& allowed) const {
    for (const auto& [key, value] : kv_) {
        (void)value;
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == key;
        if (!ok) throw ConfigError("unknown config key '" + key + "'");
    }
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "arch", "k", "pretrain_epochs", "finetune_epochs", "prune_epochs", "lr", "momentum",
        "weight_decay", "lr_milestones", "lr_decay", "score_lr", "score_momentum", "batch_size",
        "fixed_classifier", "mask_optimization", "dropout_rate", "mc_passes", "seed",
        "dataset", "blobs_classes", "blobs_dim", "blobs_train", "blobs_test", "blobs_std",
        "blobs_center_distance", "blobs_balanced", "blobs_seed", "idx_train_images",
        "idx_train_labels", "idx_test_images", "idx_test_labels", "cifar_train", "cifar_test",
        "normalize_mean", "normalize_std", "limit_train", "limit_test",
    };
    return keys;
}

DatasetSpec dataset_spec_from(const KvConfig& kv) {
    DatasetSpec spec;
    spec.source = kv.get_str("dataset", "synthetic_blobs");
    spec.blobs.classes = static_cast<int>(kv.get_int("blobs_classes", 2));
    spec.blobs.dim = kv.get_int("blobs_dim", 8);
    spec.blobs.train_samples = kv.get_int("blobs_train", 2000);
    spec.blobs.test_samples = kv.get_int("blobs_test", 1000);
    spec.blobs.cluster_std = kv.get_real("blobs_std", 1.0);
    spec.blobs.center_distance = kv.get_real("blobs_center_distance", 4.0);
    spec.blobs.balanced = kv.get_bool("blobs_balanced", true);
    spec.blobs.seed = kv.get_u64("blobs_seed", 1);
    spec.idx_train_images = kv.get_str("idx_train_images", "");
    spec.idx_train_labels = kv.get_str("idx_train_labels", "");
    spec.idx_test_images = kv.get_str("idx_test_images", "");
    spec.idx_test_labels = kv.get_str("idx_test_labels", "");
    spec.cifar_train = kv.get_list("cifar_train");
    spec.cifar_test = kv.get_str("cifar_test", "");
    spec.normalize_mean = kv.get_real("normalize_mean", 0.0);
    spec.normalize_std = kv.get_real("normalize_std", 1.0);
    spec.limit_train = kv.get_int("limit_train", 0);
    spec.limit_test = kv.get_int("limit_test", 0);
    return spec;
}

RunConfig run_config_from(const KvConfig& kv) {
    kv.check_known(config_keys());
    RunConfig run;
    TrainConfig& t = run.train;
    t.arch = kv.get_str("arch", "");
    t.k = static_cast<int>(kv.get_int("k", t.k));
    t.pretrain_epochs = static_cast<int>(kv.get_int("pretrain_epochs", t.pretrain_epochs));
    t.finetune_epochs = static_cast<int>(kv.get_int("finetune_epochs", t.finetune_epochs));
    t.prune_epochs = static_cast<int>(kv.get_int("prune_epochs", t.prune_epochs));
    t.lr = kv.get_real("lr", t.lr);
    t.momentum = kv.get_real("momentum", t.momentum);
    t.weight_decay = kv.get_real("weight_decay", t.weight_decay);
    for (const auto& m : kv.get_list("lr_milestones"))
        t.lr_milestones.push_back(std::stoi(m));
    t.lr_decay = kv.get_real("lr_decay", t.lr_decay);
    t.score_lr = kv.get_real("score_lr", t.score_lr);
    t.score_momentum = kv.get_real("score_momentum", t.score_momentum);
    t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
    t.fixed_classifier = kv.get_bool("fixed_classifier", t.fixed_classifier);
    t.mask_optimization = kv.get_bool("mask_optimization", t.mask_optimization);
    t.dropout_rate = kv.get_real("dropout_rate", t.dropout_rate);
    t.mc_passes = static_cast<int>(kv.get_int("mc_passes", t.mc_passes));
    t.seed = kv.get_u64("seed", t.seed);
    run.dataset = dataset_spec_from(kv);
    return run;
}

std::string canonical_config_text(const RunConfig& run) {
    const TrainConfig& t = run.train;
    const DatasetSpec& d = run.dataset;
    std::ostringstream os;
    os << "arch = " << t.arch << "\n";
    os << "k = " << t.k << "\n";
    os << "pretrain_epochs = " << t.pretrain_epochs << "\n";
    os << "finetune_epochs = " << t.finetune_epochs << "\n";
    os << "prune_epochs = " << t.prune_epochs << "\n";
    os << "lr = " << fmt_real(t.lr) << "\n";
    os << "momentum = " << fmt_real(t.momentum) << "\n";
    os << "weight_decay = " << fmt_real(t.weight_decay) << "\n";
    os << "lr_milestones = ";
    for (std::size_t i = 0; i < t.lr_milestones.size(); ++i)
        os << (i ? "," : "") << t.lr_milestones[i];
    os << "\n";
    os << "lr_decay = " << fmt_real(t.lr_decay) << "\n";
    os << "score_lr = " << fmt_real(t.score_lr) << "\n";
    os << "score_momentum = " << fmt_real(t.score_momentum) << "\n";
    os << "batch_size = " << t.batch_size << "\n";
    os << "fixed_classifier = " << (t.fixed_classifier ? "true" : "false") << "\n";
    os << "mask_optimization = " << (t.mask_optimization ? "true" : "false") << "\n";
    os << "dropout_rate = " << fmt_real(t.dropout_rate) << "\n";
    os << "mc_passes = " << t.mc_passes << "\n";
    os << "seed = " << t.seed << "\n";
    os << "dataset = " << d.source << "\n";
    os << "blobs_classes = " << d.blobs.classes << "\n";
    os << "blobs_dim = " << d.blobs.dim << "\n";
    os << "blobs_train = " << d.blobs.train_samples << "\n";
    os << "blobs_test = " << d.blobs.test_samples << "\n";
    os << "blobs_std = " << fmt_real(d.blobs.cluster_std) << "\n";
    os << "blobs_center_distance = " << fmt_real(d.blobs.center_distance) << "\n";
    os << "blobs_balanced = " << (d.blobs.balanced ? "true" : "false") << "\n";
    os << "blobs_seed = " << d.blobs.seed << "\n";
    os << "idx_train_images = " << d.idx_train_images << "\n";
    os << "idx_train_labels = " << d.idx_train_labels << "\n";
    os << "idx_test_images = " << d.idx_test_images << "\n";
    os << "idx_test_labels = " << d.idx_test_labels << "\n";
    os << "cifar_train = ";
    for (std::size_t i = 0; i < d.cifar_train.size(); ++i)
        os << (i ? "," : "") << d.cifar_train[i];
    os << "\n";
    os << "cifar_test = " << d.cifar_test << "\n";
    os << "normalize_mean = " << fmt_real(d.normalize_mean) << "\n";
    os << "normalize_std = " << fmt_real(d.normalize_std) << "\n";
    os << "limit_train = " << d.limit_train << "\n";
    os << "limit_test = " << d.limit_test << "\n";
    return os.str();
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string part;
    while (std::getline(is, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ConfigError("bad integer '" + part + "' in list");
        }
    }
    return out;
}

}  // namespace subnetens

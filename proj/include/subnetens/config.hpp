#pragma once

#include "subnetens/data.hpp"
#include "subnetens/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace subnetens {

/// Flat "key = value" configuration text, one pair per line, '#' comments.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    std::string get_str(const std::string& key, const std::string& def) const;
    long get_int(const std::string& key, long def) const;
    double get_real(const std::string& key, double def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
    std::vector<std::string> get_list(const std::string& key) const;

    /// Rejects keys outside the known vocabulary, naming the offender.
    void check_known(const std::vector<std::string>& allowed) const;

    const std::map<std::string, std::string>& values() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

struct RunConfig {
    TrainConfig train;
    DatasetSpec dataset;
};

/// Known keys for training and dataset configs.
const std::vector<std::string>& config_keys();

RunConfig run_config_from(const KvConfig& kv);
DatasetSpec dataset_spec_from(const KvConfig& kv);

/// Deterministic full echo of a resolved configuration; identical inputs give
/// byte-identical text.
std::string canonical_config_text(const RunConfig& run);

std::vector<int> parse_int_list(const std::string& text);

}  // namespace subnetens

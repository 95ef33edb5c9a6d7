#include "subnetens/cli.hpp"

#include "subnetens/checkpoint.hpp"
#include "subnetens/config.hpp"
#include "subnetens/eval.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace subnetens {
namespace {

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

struct CliFailure {
    ExitCode code;
    std::string kind;
    std::string msg;
};

[[noreturn]] void raise(ExitCode code, const std::string& kind, const std::string& msg) {
    throw CliFailure{code, kind, msg};
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

void render_table(const std::vector<std::vector<std::string>>& cells, std::ostream& os) {
    if (cells.empty()) return;
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c)
            os << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
        os << "\n";
    }
}

struct TrainArgs {
    std::string method, config_path, out_path;
    int k = 0;
    std::uint64_t seed = 0;
    bool has_k = false, has_seed = false, verbose = false;
};

int run_train(const TrainArgs& a) {
    RunConfig run = run_config_from(KvConfig::parse_file(a.config_path));
    if (a.has_k) run.train.k = a.k;
    if (a.has_seed) run.train.seed = a.seed;
    run.train.log_to_stdout = a.verbose;
    if (run.train.k < 1) raise(kExitUsage, "usage", "--k must be at least 1");
    run.train.validate();
    Dataset ds = load_dataset(run.dataset);

    std::string echo = canonical_config_text(run);
    std::vector<ModelBundle> bundles;
    TrainMethod method = method_from_name(a.method);
    switch (method) {
        case TrainMethod::orthogonal:
            bundles.push_back(train_orthogonal(run.train, ds));
            break;
        case TrainMethod::mc_dropout:
            bundles.push_back(train_mc_dropout(run.train, ds));
            break;
        case TrainMethod::deep_ensemble:
            bundles = train_deep_ensemble(run.train, ds);
            break;
    }
    for (auto& b : bundles) b.config_text = echo;
    save_checkpoint(bundles, a.out_path);
    std::cout << "saved " << method_name(method) << " checkpoint (" << bundles.size()
              << (bundles.size() == 1 ? " bundle" : " bundles") << ") to " << a.out_path << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint_path, dataset_path, out_path;
    int mc_passes = 30;
    std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
    auto bundles = load_checkpoint(a.checkpoint_path);
    if (bundles.empty()) raise(kExitFormat, "format", "checkpoint holds no bundles");

    DatasetSpec spec;
    if (!a.dataset_path.empty())
        spec = dataset_spec_from(KvConfig::parse_file(a.dataset_path));
    else if (!bundles[0].config_text.empty())
        spec = dataset_spec_from(KvConfig::parse_string(bundles[0].config_text));
    else
        raise(kExitUsage, "usage", "no --dataset given and the checkpoint has no dataset echo");
    Dataset ds = load_dataset(spec);

    EvalReport report = bundles.size() > 1 ? evaluate(bundles, ds)
                                           : evaluate(bundles[0], ds, a.mc_passes, a.seed);
    std::string kv = report.to_kv();
    std::cout << kv;
    if (!a.out_path.empty()) write_text_file(a.out_path, kv);
    return kExitOk;
}

struct SweepArgs {
    std::string config_path, k_list, out_path;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

int run_sweep(const SweepArgs& a) {
    RunConfig run = run_config_from(KvConfig::parse_file(a.config_path));
    if (a.has_seed) run.train.seed = a.seed;
    auto k_values = parse_int_list(a.k_list);
    if (k_values.empty()) raise(kExitUsage, "usage", "--k-list needs at least one value");
    Dataset ds = load_dataset(run.dataset);
    SweepTable table = sweep_k(run.train, ds, k_values);
    std::string csv = table.to_csv();
    std::cout << csv;
    if (!a.out_path.empty()) write_text_file(a.out_path, csv);
    bool all_ok = true;
    for (const auto& row : table.rows) all_ok = all_ok && row.ok;
    if (!all_ok) raise(kExitNumeric, "numeric", "one or more sweep cells failed; see the table");
    return kExitOk;
}

int run_verify(const std::string& checkpoint_path) {
    auto bytes = read_text_file(checkpoint_path);
    auto bundles = deserialize_checkpoint(bytes);

    bool ok = true;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        const ModelBundle& b = bundles[i];
        std::cout << "bundle " << i + 1 << ": method " << method_name(b.method) << "\n";
        if (b.masks) {
            auto rep = verify(*b.masks);
            std::cout << rep.summary();
            ok = ok && rep.pass();
        } else {
            std::cout << "orthogonality: not applicable (no mask set)\n";
        }
        bool freeze_ok = !b.config.fixed_classifier || b.store.classifier_frozen;
        std::cout << "freeze flag: " << (freeze_ok ? "pass" : "fail") << "\n";
        ok = ok && freeze_ok;
    }
    bool round_trip = serialize_checkpoint(bundles) == bytes;
    std::cout << "round-trip: " << (round_trip ? "pass" : "fail") << "\n";
    ok = ok && round_trip;
    if (!ok) raise(kExitConstraint, "constraint", "checkpoint failed verification");
    return kExitOk;
}

int run_report(const std::string& in_path) {
    std::string text = read_text_file(in_path);
    std::vector<std::vector<std::string>> cells;
    if (text.rfind("k,members,", 0) == 0) {
        auto table = SweepTable::from_csv(text);
        cells.push_back({"k", "members", "ens_acc", "mean_ind_acc", "nll", "ece", "ia", "params",
                         "error"});
        for (const auto& row : table.rows) {
            auto f = [](double v) {
                std::ostringstream os;
                os << std::setprecision(4) << v;
                return os.str();
            };
            if (row.ok)
                cells.push_back({std::to_string(row.k), std::to_string(row.report.members),
                                 f(row.report.ensemble_accuracy),
                                 f(row.report.mean_member_accuracy), f(row.report.nll),
                                 f(row.report.ece), row.report.has_ia ? f(row.report.ia) : "-",
                                 std::to_string(row.report.param_count), ""});
            else
                cells.push_back({std::to_string(row.k), "-", "-", "-", "-", "-", "-", "-",
                                 row.error});
        }
    } else {
        auto report = EvalReport::from_kv(text);
        std::istringstream is(report.to_kv());
        std::string line;
        cells.push_back({"metric", "value"});
        while (std::getline(is, line)) {
            auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            cells.push_back({line.substr(0, eq), line.substr(eq + 3)});
        }
    }
    render_table(cells, std::cout);
    return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"train and evaluate ensembles of non-overlapping dropout subnetworks"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a model and save a checkpoint");
    train_cmd->add_option("method", train.method, "orthogonal | mc-dropout | deep-ensemble")
        ->required()
        ->check(CLI::IsMember({"orthogonal", "mc-dropout", "deep-ensemble"}));
    train_cmd->add_option("--config", train.config_path, "key = value config file")->required();
    auto* k_opt = train_cmd->add_option("--k", train.k, "subnetwork / member count");
    auto* seed_opt = train_cmd->add_option("--seed", train.seed, "training seed");
    train_cmd->add_option("--out", train.out_path, "checkpoint path")->required();
    train_cmd->add_flag("--verbose", train.verbose, "echo per-epoch log lines");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path)->required();
    eval_cmd->add_option("--dataset", eval_args.dataset_path,
                         "dataset config; defaults to the checkpoint's echo");
    eval_cmd->add_option("--mc-passes", eval_args.mc_passes, "forward passes for mc-dropout");
    eval_cmd->add_option("--seed", eval_args.seed, "seed for mc-dropout masks");
    eval_cmd->add_option("--out", eval_args.out_path, "also write the report here");

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate across subnetwork counts");
    sweep_cmd->add_option("--config", sweep.config_path)->required();
    sweep_cmd->add_option("--k-list", sweep.k_list, "comma-separated subnetwork counts")
        ->required();
    auto* sweep_seed = sweep_cmd->add_option("--seed", sweep.seed);
    sweep_cmd->add_option("--out", sweep.out_path, "also write the csv table here");

    std::string verify_path;
    auto* verify_cmd = app.add_subcommand("verify", "audit a checkpoint's constraints");
    verify_cmd->add_option("--checkpoint", verify_path)->required();

    std::string report_path;
    auto* report_cmd = app.add_subcommand("report", "render a report or sweep table");
    report_cmd->add_option("--in", report_path, "eval report or sweep csv")->required();

    std::vector<const char*> argv;
    argv.push_back("subnetens");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        train.has_k = k_opt->count() > 0;
        train.has_seed = seed_opt->count() > 0;
        sweep.has_seed = sweep_seed->count() > 0;

        if (*train_cmd) return run_train(train);
        if (*eval_cmd) return run_eval(eval_args);
        if (*sweep_cmd) return run_sweep(sweep);
        if (*verify_cmd) return run_verify(verify_path);
        if (*report_cmd) return run_report(report_path);
        return kExitUsage;
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return kExitUsage;
    } catch (const CliFailure& e) {
        std::cerr << "error: " << e.kind << ": " << one_line(e.msg) << "\n";
        return e.code;
    } catch (const ChecksumError& e) {
        std::cerr << "error: checksum: " << one_line(e.what()) << "\n";
        return kExitChecksum;
    } catch (const VersionError& e) {
        std::cerr << "error: version: " << one_line(e.what()) << "\n";
        return kExitVersion;
    } catch (const FormatError& e) {
        std::cerr << "error: format: " << one_line(e.what()) << "\n";
        return kExitFormat;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << one_line(e.what()) << "\n";
        return kExitNumeric;
    } catch (const MaskError& e) {
        std::cerr << "error: constraint: " << one_line(e.what()) << "\n";
        return kExitConstraint;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << one_line(e.what()) << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return kExitNumeric;
    }
}

}  // namespace subnetens

#include "subnetens/eval.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace subnetens {
namespace {

constexpr double kProbFloor = 1e-12;
constexpr Index kPredictChunk = 512;

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

Eigen::MatrixXd softmax_rows_double(const Matrix<float>& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        Eigen::ArrayXd row = logits.row(i).transpose().cast<double>();
        row -= row.maxCoeff();
        row = row.exp();
        p.row(i) = (row / row.sum()).transpose();
    }
    return p;
}

}  // namespace

void PredictionMatrix::validate() const {
    for (const auto& m : members) {
        if (m.rows() != labels.size()) throw ShapeError("prediction rows do not match labels");
        if (m.minCoeff() < 0) throw ShapeError("negative probability");
        for (Index i = 0; i < m.rows(); ++i)
            if (std::abs(m.row(i).sum() - 1.0) > 1e-6)
                throw ShapeError("probability row does not sum to 1");
    }
}

Eigen::MatrixXd aggregate(const PredictionMatrix& preds) {
    if (preds.members.empty()) throw ShapeError("cannot aggregate an empty member set");
    Eigen::MatrixXd sum = preds.members[0];
    for (std::size_t m = 1; m < preds.members.size(); ++m) sum += preds.members[m];
    return sum / static_cast<double>(preds.members.size());
}

double accuracy(const Eigen::MatrixXd& probs, const Labels& labels) {
    Index correct = 0;
    for (Index i = 0; i < probs.rows(); ++i) {
        Index arg;
        probs.row(i).maxCoeff(&arg);
        correct += arg == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

double nll(const Eigen::MatrixXd& probs, const Labels& labels) {
    if (labels.size() != probs.rows()) throw ShapeError("label count does not match predictions");
    double sum = 0;
    for (Index i = 0; i < probs.rows(); ++i) {
        if (labels[i] < 0 || labels[i] >= probs.cols())
            throw ShapeError("label out of class range");
        double p = std::min(1.0, std::max(kProbFloor, probs(i, labels[i])));
        sum -= std::log(p);
    }
    return sum / static_cast<double>(probs.rows());
}

namespace detail {

int ece_bin(double confidence, int bins) {
    if (confidence <= 0) return 0;
    int b = std::min(bins - 1, static_cast<int>(confidence * bins));
    while (b > 0 && !(confidence > static_cast<double>(b) / bins)) --b;
    while (b < bins - 1 && confidence > static_cast<double>(b + 1) / bins) ++b;
    return b;
}

}  // namespace detail

double ece(const Eigen::MatrixXd& probs, const Labels& labels, int bins) {
    if (bins < 1) throw ConfigError("ece needs at least one bin");
    std::vector<Index> count(bins, 0);
    std::vector<double> conf_sum(bins, 0), acc_sum(bins, 0);
    for (Index i = 0; i < probs.rows(); ++i) {
        Index arg;
        double conf = probs.row(i).maxCoeff(&arg);
        int b = detail::ece_bin(conf, bins);
        ++count[b];
        conf_sum[b] += conf;
        acc_sum[b] += arg == labels[i];
    }
    double total = static_cast<double>(probs.rows());
    double e = 0;
    for (int b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        double n_b = static_cast<double>(count[b]);
        e += (n_b / total) * std::abs(acc_sum[b] / n_b - conf_sum[b] / n_b);
    }
    return e;
}

double interrater_agreement(const PredictionMatrix& preds) {
    const int L = preds.member_count();
    if (L < 2) throw ShapeError("inter-rater agreement needs at least 2 members");
    const Index N = preds.labels.size();

    std::vector<Index> l(N, 0);
    for (const auto& m : preds.members)
        for (Index j = 0; j < N; ++j) {
            Index arg;
            m.row(j).maxCoeff(&arg);
            l[j] += arg == preds.labels[j];
        }

    double p_bar = 0;
    for (Index j = 0; j < N; ++j) p_bar += static_cast<double>(l[j]);
    p_bar /= static_cast<double>(N) * L;
    if (p_bar <= 0.0 || p_bar >= 1.0) return 1.0;  // full (dis)agreement is degenerate

    double disagreement = 0;
    for (Index j = 0; j < N; ++j)
        disagreement += static_cast<double>(l[j]) * static_cast<double>(L - l[j]);
    disagreement /= static_cast<double>(L);
    double denom = static_cast<double>(N) * (L - 1) * p_bar * (1.0 - p_bar);
    return 1.0 - disagreement / denom;
}

std::vector<double> per_member_accuracy(const PredictionMatrix& preds) {
    std::vector<double> acc;
    acc.reserve(preds.members.size());
    for (const auto& m : preds.members) acc.push_back(accuracy(m, preds.labels));
    return acc;
}

Eigen::MatrixXd predict_probs(const WeightStore<float>& store, const Matrix<float>& x,
                              const Mask* mask, float scale, int subnet) {
    Eigen::MatrixXd probs(x.rows(), store.arch.class_count);
    MaskApply<float> ma{mask, scale};
    for (Index start = 0; start < x.rows(); start += kPredictChunk) {
        Index b = std::min(kPredictChunk, x.rows() - start);
        Matrix<float> chunk = x.middleRows(start, b);
        probs.middleRows(start, b) = softmax_rows_double(forward_eval(store, chunk, ma, subnet));
    }
    return probs;
}

PredictionMatrix mc_dropout_predict(const ModelBundle& bundle, const Matrix<float>& x,
                                    const Labels& labels, int passes, std::uint64_t seed) {
    if (passes < 1) throw ConfigError("mc_dropout_predict needs at least one pass");
    const double rate = bundle.config.dropout_rate;
    const MaskLayout layout = bundle.store.maskable_layout();

    PredictionMatrix preds;
    preds.labels = labels;
    for (int pass = 0; pass < passes; ++pass) {
        if (rate > 0) {
            auto rng = make_rng(seed, {kStreamMcPredict, static_cast<std::uint64_t>(pass)});
            Mask m = bernoulli_mask(layout, 1.0 - rate, rng);
            float scale = static_cast<float>(1.0 / (1.0 - rate));
            preds.members.push_back(predict_probs(bundle.store, x, &m, scale, 0));
        } else {
            preds.members.push_back(predict_probs(bundle.store, x));
        }
    }
    return preds;
}

PredictionMatrix member_predictions(const ModelBundle& bundle, const Matrix<float>& x,
                                    const Labels& labels, int mc_passes, std::uint64_t seed) {
    PredictionMatrix preds;
    preds.labels = labels;
    switch (bundle.method) {
        case TrainMethod::orthogonal: {
            if (!bundle.masks) throw FormatError("orthogonal bundle is missing its mask set");
            for (int i = 0; i < bundle.masks->finalized; ++i)
                preds.members.push_back(
                    predict_probs(bundle.store, x, &bundle.masks->masks[i], 1.0f, i));
            break;
        }
        case TrainMethod::mc_dropout:
            return mc_dropout_predict(bundle, x, labels, mc_passes, seed);
        case TrainMethod::deep_ensemble:
            preds.members.push_back(predict_probs(bundle.store, x));
            break;
    }
    return preds;
}

PredictionMatrix member_predictions(const std::vector<ModelBundle>& ensemble,
                                    const Matrix<float>& x, const Labels& labels) {
    PredictionMatrix preds;
    preds.labels = labels;
    for (const auto& member : ensemble) preds.members.push_back(predict_probs(member.store, x));
    return preds;
}

namespace {

EvalReport report_from(const PredictionMatrix& preds, const std::string& method,
                       const ArchSpec& arch, int subnet_count) {
    EvalReport r;
    r.method = method;
    r.members = preds.member_count();
    auto ens = aggregate(preds);
    r.ensemble_accuracy = accuracy(ens, preds.labels);
    r.member_accuracy = per_member_accuracy(preds);
    for (double a : r.member_accuracy) r.mean_member_accuracy += a;
    r.mean_member_accuracy /= static_cast<double>(r.member_accuracy.size());
    r.nll = nll(ens, preds.labels);
    r.ece = ece(ens, preds.labels, r.ece_bins);
    if (r.members >= 2) {
        r.ia = interrater_agreement(preds);
        r.has_ia = true;
    }
    r.param_count = arch.shared_param_count();
    r.aux_param_count = arch.per_subnet_param_count() * subnet_count;
    return r;
}

}  // namespace

EvalReport evaluate(const ModelBundle& bundle, const Dataset& ds, int mc_passes,
                    std::uint64_t seed) {
    auto preds = member_predictions(bundle, ds.test_x, ds.test_y, mc_passes, seed);
    return report_from(preds, method_name(bundle.method), bundle.store.arch,
                       bundle.store.subnet_count);
}

EvalReport evaluate(const std::vector<ModelBundle>& ensemble, const Dataset& ds) {
    if (ensemble.empty()) throw ShapeError("cannot evaluate an empty ensemble");
    auto preds = member_predictions(ensemble, ds.test_x, ds.test_y);
    EvalReport r = report_from(preds, method_name(TrainMethod::deep_ensemble),
                               ensemble[0].store.arch, 1);
    // members are whole networks, so the shared count scales with the ensemble
    r.param_count = ensemble[0].store.arch.shared_param_count() *
                    static_cast<Index>(ensemble.size());
    return r;
}

std::string EvalReport::to_kv() const {
    std::ostringstream os;
    os << "method = " << method << "\n";
    os << "members = " << members << "\n";
    os << "ensemble_accuracy = " << fmt(ensemble_accuracy) << "\n";
    os << "mean_member_accuracy = " << fmt(mean_member_accuracy) << "\n";
    os << "member_accuracy = ";
    for (std::size_t i = 0; i < member_accuracy.size(); ++i)
        os << (i ? "," : "") << fmt(member_accuracy[i]);
    os << "\n";
    os << "nll = " << fmt(nll) << "\n";
    os << "ece = " << fmt(ece) << "\n";
    os << "ece_bins = " << ece_bins << "\n";
    if (has_ia) os << "ia = " << fmt(ia) << "\n";
    os << "param_count = " << param_count << "\n";
    os << "aux_param_count = " << aux_param_count << "\n";
    return os.str();
}

EvalReport EvalReport::from_kv(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "method") r.method = val;
        else if (key == "members") r.members = std::stoi(val);
        else if (key == "ensemble_accuracy") r.ensemble_accuracy = std::stod(val);
        else if (key == "mean_member_accuracy") r.mean_member_accuracy = std::stod(val);
        else if (key == "member_accuracy") {
            std::istringstream vs(val);
            std::string part;
            while (std::getline(vs, part, ',')) r.member_accuracy.push_back(std::stod(part));
        } else if (key == "nll") r.nll = std::stod(val);
        else if (key == "ece") r.ece = std::stod(val);
        else if (key == "ece_bins") r.ece_bins = std::stoi(val);
        else if (key == "ia") {
            r.ia = std::stod(val);
            r.has_ia = true;
        } else if (key == "param_count") r.param_count = std::stol(val);
        else if (key == "aux_param_count") r.aux_param_count = std::stol(val);
    }
    return r;
}

std::string SweepTable::to_csv() const {
    std::ostringstream os;
    os << "k,members,ensemble_accuracy,mean_member_accuracy,nll,ece,ia,param_count,error\n";
    for (const auto& row : rows) {
        os << row.k << ",";
        if (row.ok) {
            const auto& r = row.report;
            os << r.members << "," << fmt(r.ensemble_accuracy) << ","
               << fmt(r.mean_member_accuracy) << "," << fmt(r.nll) << "," << fmt(r.ece) << ","
               << (r.has_ia ? fmt(r.ia) : std::string("")) << "," << r.param_count << ",";
        } else {
            os << ",,,,,," << row.error;
        }
        os << "\n";
    }
    return os.str();
}

SweepTable SweepTable::from_csv(const std::string& text) {
    SweepTable table;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(9);
        SweepRow row;
        row.k = std::stoi(cells[0]);
        row.ok = !cells[1].empty();
        if (row.ok) {
            row.report.members = std::stoi(cells[1]);
            row.report.ensemble_accuracy = std::stod(cells[2]);
            row.report.mean_member_accuracy = std::stod(cells[3]);
            row.report.nll = std::stod(cells[4]);
            row.report.ece = std::stod(cells[5]);
            if (!cells[6].empty()) {
                row.report.ia = std::stod(cells[6]);
                row.report.has_ia = true;
            }
            row.report.param_count = std::stol(cells[7]);
        } else {
            row.error = cells[8];
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

SweepTable sweep_k(const TrainConfig& base, const Dataset& ds, const std::vector<int>& k_values) {
    if (k_values.empty()) throw ConfigError("sweep needs at least one k value");
    SweepTable table;
    for (int k : k_values) {
        SweepRow row;
        row.k = k;
        try {
            TrainConfig cfg = base;
            cfg.k = k;
            ModelBundle bundle = train_orthogonal(cfg, ds);
            row.report = evaluate(bundle, ds, cfg.mc_passes, cfg.seed);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace subnetens

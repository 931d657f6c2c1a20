#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "hystar/dataset.hpp"
#include "hystar/encoder.hpp"
#include "hystar/optim.hpp"
#include "hystar/stylence.hpp"

namespace hystar {

struct TrainConfig {
    std::size_t batch_size = 48;
    std::size_t epochs = 35;
    double lr_static = 1e-3;
    double lr_hyper = 1e-5;
    LossKind loss = LossKind::stylence;
    LossConfig loss_config;
    AblationMode mode = AblationMode::hybrid;
    std::uint64_t seed = 0;
    std::size_t eval_every = 5; // 0 evaluates after the last epoch only
    bool single_style_batches = false;

    void validate() const {
        if (batch_size < 2) throw ConfigError("train.batch_size", "must be >= 2");
        if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
        if (!(lr_static >= 0)) throw ConfigError("train.lr_static", "must be >= 0");
        if (!(lr_hyper >= 0)) throw ConfigError("train.lr_hyper", "must be >= 0");
        loss_config.validate();
    }
};

/// Frozen style extractor plus the modulated encoder.
template <typename T>
struct Model {
    Model(const EncoderConfig& cfg, std::uint64_t seed) : encoder(cfg, seed), extractor(cfg, seed) {}

    Encoder<T> encoder;
    StyleExtractor<T> extractor;

    std::vector<NamedTensor<T>> named_tensors() {
        auto out = extractor.named_tensors();
        auto enc = encoder.named_tensors();
        out.insert(out.end(), enc.begin(), enc.end());
        return out;
    }
};

struct StyleScore {
    std::string style;
    double top1 = 0.0; // percent
    double top5 = 0.0;
    std::size_t queries = 0;
};

struct RetrievalMetrics {
    std::vector<StyleScore> styles; // non-gallery styles in style-id order
    double mean_top1 = 0.0;         // macro average over query styles
    double mean_top5 = 0.0;
};

/// Top-1/Top-5 of each query against a gallery by cosine similarity.
///
/// `truth[q]` is the gallery row of query q's counterpart. A query's rank is
/// the number of gallery rows scoring higher, plus equal-scoring rows with a
/// lower index.
template <typename T>
RetrievalMetrics retrieval_metrics(const Tensor<T>& gallery, const Tensor<T>& queries,
                                   const std::vector<std::size_t>& truth, const std::vector<std::size_t>& query_style,
                                   const std::vector<std::string>& style_names) {
    if (gallery.numel() == 0 || gallery.rows() == 0) throw ContractError("evaluate: empty gallery");
    if (gallery.cols() != queries.cols()) throw ShapeError("evaluate: embedding widths differ");
    if (truth.size() != queries.rows() || query_style.size() != queries.rows())
        throw ShapeError("evaluate: one truth index and style per query required");
    auto unit = [](const Tensor<T>& x) {
        Eigen::MatrixXd m = as_matrix(x).template cast<double>();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double n = m.row(i).norm();
            if (n == 0.0) throw NumericError("evaluate: zero embedding");
            m.row(i) /= n;
        }
        return m;
    };
    const Eigen::MatrixXd G = unit(gallery), Q = unit(queries);
    const Eigen::MatrixXd S = Q * G.transpose();
    std::map<std::size_t, StyleScore> per_style;
    for (Eigen::Index q = 0; q < S.rows(); ++q) {
        const auto qi = static_cast<std::size_t>(q);
        const auto t = static_cast<Eigen::Index>(truth[qi]);
        if (truth[qi] >= gallery.rows()) throw ContractError("evaluate: truth index outside gallery");
        std::size_t rank = 0;
        for (Eigen::Index j = 0; j < S.cols(); ++j)
            if (S(q, j) > S(q, t) || (S(q, j) == S(q, t) && j < t)) ++rank;
        auto& sc = per_style[query_style[qi]];
        sc.style = style_names.at(query_style[qi]);
        ++sc.queries;
        sc.top1 += rank < 1;
        sc.top5 += rank < 5;
    }
    RetrievalMetrics m;
    for (auto& [id, sc] : per_style) {
        sc.top1 = 100.0 * sc.top1 / static_cast<double>(sc.queries);
        sc.top5 = 100.0 * sc.top5 / static_cast<double>(sc.queries);
        m.mean_top1 += sc.top1;
        m.mean_top5 += sc.top5;
        m.styles.push_back(sc);
    }
    if (!m.styles.empty()) {
        m.mean_top1 /= static_cast<double>(m.styles.size());
        m.mean_top5 /= static_cast<double>(m.styles.size());
    }
    return m;
}

enum class Split { train, eval, all };

inline bool in_split(const DataItem& it, Split split) {
    return split == Split::all || (split == Split::eval) == is_eval_instance(it.instance_id);
}

/// Frozen per-item inputs of one model: token blocks and style vectors.
template <typename T>
struct PreparedData {
    std::size_t seq_len = 0, d_model = 0, d_style = 0;
    AlignedVector<T> tokens; // item-major, seq_len x d_model each
    AlignedVector<T> z;      // item-major, d_style each

    PreparedData(Model<T>& model, const StyleDataset& ds) {
        const auto& cfg = model.encoder.config();
        if (cfg.image_size != ds.image_size)
            throw ContractError("model image size " + std::to_string(cfg.image_size) + " differs from dataset's " +
                                std::to_string(ds.image_size));
        seq_len = cfg.seq_len();
        d_model = cfg.d_model;
        d_style = cfg.d_style;
        constexpr std::size_t chunk = 128;
        for (std::size_t b0 = 0; b0 < ds.items.size(); b0 += chunk) {
            std::vector<std::size_t> idx;
            for (std::size_t i = b0; i < std::min(ds.items.size(), b0 + chunk); ++i) idx.push_back(i);
            const Tensor<T> img = ds.images<T>(idx);
            const Tensor<T> tok = model.encoder.embed_tokens(img);
            const Tensor<T> zz = model.extractor.extract(img);
            tokens.insert(tokens.end(), tok.values().begin(), tok.values().end());
            z.insert(z.end(), zz.values().begin(), zz.values().end());
        }
    }

    Tensor<T> token_batch(const std::vector<std::size_t>& idx) const {
        Tensor<T> out({idx.size() * seq_len, d_model});
        const std::size_t block = seq_len * d_model;
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>(idx[r] * block), block, out.data() + r * block);
        return out;
    }

    Tensor<T> style_batch(const std::vector<std::size_t>& idx) const {
        Tensor<T> out({idx.size(), d_style});
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(idx[r] * d_style), d_style, out.data() + r * d_style);
        return out;
    }
};

/// Embeddings of the given items without recording gradients.
template <typename T>
Tensor<T> embed_items(Model<T>& model, const PreparedData<T>& data, const std::vector<std::size_t>& idx,
                      std::size_t chunk = 64) {
    Tensor<T> out({idx.size(), model.encoder.config().embed_dim});
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += chunk) {
        std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(b0),
                                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b0 + chunk)));
        Graph<T> g(GradMode::disabled);
        const auto& e = g.value(model.encoder.forward(g, data.token_batch(part), data.style_batch(part)));
        std::copy(e.values().begin(), e.values().end(), out.data() + b0 * out.cols());
    }
    return out;
}

/// Retrieval of every non-gallery item of the split against the split's gallery.
template <typename T>
RetrievalMetrics evaluate(Model<T>& model, const StyleDataset& ds, const PreparedData<T>& data,
                          Split split = Split::eval) {
    std::vector<std::size_t> gallery, queries, truth, qstyle;
    std::map<std::size_t, std::size_t> gallery_row;
    const auto counterpart = ds.counterparts();
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        if (ds.items[i].style_id == 0 && in_split(ds.items[i], split)) {
            gallery_row[i] = gallery.size();
            gallery.push_back(i);
        }
    if (gallery.empty()) throw ContractError("evaluate: empty gallery");
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        if (ds.items[i].style_id != 0 && in_split(ds.items[i], split)) {
            queries.push_back(i);
            truth.push_back(gallery_row.at(counterpart[i]));
            qstyle.push_back(ds.items[i].style_id);
        }
    if (queries.empty()) throw ContractError("evaluate: no queries");
    return retrieval_metrics(embed_items(model, data, gallery), embed_items(model, data, queries), truth, qstyle,
                             ds.styles);
}

template <typename T>
RetrievalMetrics evaluate(Model<T>& model, const StyleDataset& ds, Split split = Split::eval) {
    PreparedData<T> data(model, ds);
    return evaluate(model, ds, data, split);
}

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    bool evaluated = false;
    RetrievalMetrics metrics;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    const RetrievalMetrics& final_metrics() const { return history.back().metrics; }
};

/// Raised when a loss or update turns non-finite; carries a state summary.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, std::string dump) : NumericError(what), dump_(std::move(dump)) {}
    const std::string& dump() const noexcept { return dump_; }

private:
    std::string dump_;
};

/// Instance-level batching over the training split. An epoch is
/// ceil(training items / batch) steps; each step takes the next `batch`
/// instances of a shuffled cycle (reshuffled when fewer remain), the anchor is
/// the instance in a random non-gallery training style and the positive is its
/// gallery counterpart.
class BatchSampler {
public:
    BatchSampler(const StyleDataset& ds, const std::vector<std::string>& holdout, std::uint64_t seed)
        : rng_(make_rng(seed, "batching")) {
        for (std::size_t s = 1; s < ds.styles.size(); ++s)
            if (std::find(holdout.begin(), holdout.end(), ds.styles[s]) == holdout.end()) styles_.push_back(s);
        if (styles_.empty()) throw ContractError("train: no non-gallery training style");
        std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> index;
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
            const auto& it = ds.items[i];
            if (!is_eval_instance(it.instance_id)) {
                index[{it.style_id, it.class_id, it.instance_id}] = i;
                ++train_items_;
            }
        }
        for (const auto& [key, i] : index) {
            const auto& [style, cls, inst] = key;
            if (style != 0) continue;
            std::vector<std::size_t> anchors(ds.styles.size(), npos);
            for (std::size_t s : styles_) {
                auto it = index.find({s, cls, inst});
                if (it != index.end()) anchors[s] = it->second;
            }
            instances_.push_back({i, std::move(anchors)});
        }
        if (instances_.size() < 2) throw ContractError("train: fewer than two training instances");
    }

    std::size_t instances() const noexcept { return instances_.size(); }
    std::size_t training_items() const noexcept { return train_items_; }

    std::size_t steps_per_epoch(std::size_t batch) const { return (train_items_ + batch - 1) / batch; }

    /// Batches of one epoch as (anchor item, positive item) index lists.
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> epoch(std::size_t batch,
                                                                                    bool single_style) {
        const std::size_t n = std::min(batch, instances_.size());
        std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
        for (std::size_t step = 0; step < steps_per_epoch(batch); ++step) {
            if (cursor_ + n > order_.size()) {
                order_.resize(instances_.size());
                std::iota(order_.begin(), order_.end(), 0);
                std::shuffle(order_.begin(), order_.end(), rng_);
                cursor_ = 0;
            }
            std::vector<std::size_t> anchors, positives;
            const std::size_t batch_style = styles_[rng_() % styles_.size()];
            for (std::size_t k = cursor_; k < cursor_ + n; ++k) {
                const auto& inst = instances_[order_[k]];
                const std::size_t s = single_style ? batch_style : styles_[rng_() % styles_.size()];
                if (inst.anchors[s] == npos) continue;
                anchors.push_back(inst.anchors[s]);
                positives.push_back(inst.gallery);
            }
            cursor_ += n;
            if (anchors.size() >= 2) out.emplace_back(std::move(anchors), std::move(positives));
        }
        return out;
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    struct Instance {
        std::size_t gallery;
        std::vector<std::size_t> anchors; // by style id
    };
    Rng rng_;
    std::vector<std::size_t> styles_;
    std::vector<Instance> instances_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0, train_items_ = 0;
};

/// Loss of one anchor/positive batch on a fresh graph; gradients accumulate
/// into the trainable tensors.
template <typename T>
double train_step_loss(Model<T>& model, const PreparedData<T>& data, const std::vector<std::size_t>& anchors,
                       const std::vector<std::size_t>& positives, const TrainConfig& cfg) {
    std::vector<std::size_t> both = anchors;
    both.insert(both.end(), positives.begin(), positives.end());
    Graph<T> g;
    Var e = model.encoder.forward(g, data.token_batch(both), data.style_batch(both));
    const std::size_t n = anchors.size();
    std::vector<std::size_t> qi(n), pi(n);
    std::iota(qi.begin(), qi.end(), 0);
    std::iota(pi.begin(), pi.end(), n);
    Var S = similarity_matrix(g, g.gather_rows(e, qi), g.gather_rows(e, pi));
    Var loss = contrastive_loss(g, S, cfg.loss, cfg.loss_config);
    const double value = static_cast<double>(g.value(loss)[0]);
    if (!std::isfinite(value)) throw NumericError("non-finite loss");
    g.backward(loss);
    return value;
}

template <typename T>
Adam<T> make_optimizer(Model<T>& model, const TrainConfig& cfg) {
    return Adam<T>({{model.encoder.static_group(), cfg.lr_static}, {model.encoder.hyper_group(), cfg.lr_hyper}});
}

/// Runs the configured number of epochs. The model's ablation mode is set from
/// the config; `on_epoch` sees every record as it is produced.
template <typename T>
TrainResult train(Model<T>& model, const StyleDataset& ds, const TrainConfig& cfg,
                  const std::vector<std::string>& holdout = {},
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    model.encoder.set_ablation_mode(cfg.mode);
    PreparedData<T> data(model, ds);
    BatchSampler sampler(ds, holdout, cfg.seed);
    Adam<T> opt = make_optimizer(model, cfg);
    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t step = 0;
        for (const auto& [anchors, positives] : sampler.epoch(cfg.batch_size, cfg.single_style_batches)) {
            ++step;
            double loss = 0.0;
            try {
                loss = train_step_loss(model, data, anchors, positives, cfg);
                opt.step();
                for (const auto& g : opt.groups())
                    for (auto* p : g.params)
                        if (!p->all_finite()) throw NumericError("non-finite parameter after update");
            } catch (const NumericError& e) {
                throw TrainingAborted(e.what(), state_dump(model, epoch, step, result, e.what()));
            }
            rec.mean_loss += loss;
        }
        rec.mean_loss /= static_cast<double>(std::max<std::size_t>(step, 1));
        const bool last = epoch == cfg.epochs;
        if (last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)) {
            rec.evaluated = true;
            rec.metrics = evaluate(model, ds, data);
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

template <typename T>
std::string state_dump(Model<T>& model, std::size_t epoch, std::size_t step, const TrainResult& so_far,
                       const std::string& reason) {
    std::string out = "reason: " + reason + "\nepoch: " + std::to_string(epoch) + "\nstep: " + std::to_string(step) +
                      "\nmode: " + to_string(model.encoder.mode()) + "\n";
    for (const auto& r : so_far.history) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "epoch %zu mean_loss %.9g\n", r.epoch, r.mean_loss);
        out += buf;
    }
    for (const auto& t : model.named_tensors()) {
        if (!t.writable) continue;
        double sq = 0.0;
        std::size_t bad = 0;
        for (T v : t.value->values()) {
            if (std::isfinite(v)) sq += static_cast<double>(v) * static_cast<double>(v);
            else ++bad;
        }
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s norm %.9g non_finite %zu\n", t.name.c_str(), std::sqrt(sq), bad);
        out += buf;
    }
    return out;
}

// ---- CSV --------------------------------------------------------------------

inline std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline constexpr const char* metrics_header = "run_id,seed,config_label,epoch,style,top1,top5";

/// One row per query style plus a "mean" row for every evaluated epoch.
inline void write_metrics_rows(std::ostream& os, const std::string& run_id, std::uint64_t seed,
                               const std::string& label, const TrainResult& result) {
    for (const auto& r : result.history) {
        if (!r.evaluated) continue;
        const std::string prefix = run_id + "," + std::to_string(seed) + "," + label + "," + std::to_string(r.epoch) + ",";
        for (const auto& s : r.metrics.styles) os << prefix << s.style << "," << fmt_pct(s.top1) << "," << fmt_pct(s.top5) << "\n";
        os << prefix << "mean," << fmt_pct(r.metrics.mean_top1) << "," << fmt_pct(r.metrics.mean_top5) << "\n";
    }
}

struct TableRow {
    std::string key; // configuration label or swept value
    std::uint64_t seed = 0;
    RetrievalMetrics metrics;
};

/// `<key_column>,seed,<style>...,mean` with Top-1 per query style.
inline void write_top1_table(std::ostream& os, const std::string& key_column, const std::vector<TableRow>& rows) {
    os << key_column << ",seed";
    if (!rows.empty())
        for (const auto& s : rows.front().metrics.styles) os << "," << s.style;
    os << ",mean\n";
    for (const auto& r : rows) {
        os << r.key << "," << r.seed;
        for (const auto& s : r.metrics.styles) os << "," << fmt_pct(s.top1);
        os << "," << fmt_pct(r.metrics.mean_top1) << "\n";
    }
}

/// Mean of mean_top1 over the rows with the given key.
inline double average_mean_top1(const std::vector<TableRow>& rows, const std::string& key) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.key == key) {
            s += r.metrics.mean_top1;
            ++n;
        }
    if (n == 0) throw ContractError("no rows for '" + key + "'");
    return s / static_cast<double>(n);
}

// ---- drivers ------------------------------------------------------------------

struct ExperimentSpec {
    EncoderConfig encoder;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::string> holdout;
};

/// One finished run of a driver, as handed to the progress callback.
struct RunRecord {
    std::string run_id;
    std::string label;
    std::uint64_t seed = 0;
    TrainResult result;
};

using RunCallback = std::function<void(const RunRecord&)>;

template <typename T = float>
RunRecord run_one(const StyleDataset& ds, const ExperimentSpec& spec, const TrainConfig& cfg, const std::string& label,
                  std::uint64_t seed) {
    TrainConfig c = cfg;
    c.seed = seed;
    Model<T> model(spec.encoder, seed);
    RunRecord rec{label + "_s" + std::to_string(seed), label, seed, train(model, ds, c, spec.holdout)};
    return rec;
}

/// The four ablation configurations, in order.
inline std::vector<std::pair<std::string, std::pair<AblationMode, LossKind>>> ablation_configs() {
    return {{"frozen", {AblationMode::frozen, LossKind::infonce}},
            {"static_only+infonce", {AblationMode::static_only, LossKind::infonce}},
            {"hybrid+infonce", {AblationMode::hybrid, LossKind::infonce}},
            {"hybrid+stylence", {AblationMode::hybrid, LossKind::stylence}}};
}

template <typename T = float>
std::vector<TableRow> run_ablation(const StyleDataset& ds, const ExperimentSpec& spec, const RunCallback& on_run = {}) {
    std::vector<TableRow> rows;
    for (const auto& [label, cfgpair] : ablation_configs())
        for (std::uint64_t seed : spec.seeds) {
            TrainConfig c = spec.train;
            c.mode = cfgpair.first;
            c.loss = cfgpair.second;
            RunRecord rec = run_one<T>(ds, spec, c, label, seed);
            rows.push_back({label, seed, rec.result.final_metrics()});
            if (on_run) on_run(rec);
        }
    return rows;
}

inline const std::vector<double>& default_sweep_values(const std::string& param) {
    static const std::vector<double> gamma{1, 10, 30, 50, 80, 120, 200, 500};
    static const std::vector<double> lambda{0.1, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0};
    if (param == "gamma") return gamma;
    if (param == "lambda") return lambda;
    throw ConfigError("sweep.param", "unknown sweep parameter '" + param + "'");
}

inline std::string fmt_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

/// One run per (value, seed) with the loss hyperparameter overridden.
template <typename T = float>
std::vector<TableRow> run_sweep(const StyleDataset& ds, const ExperimentSpec& spec, const std::string& param,
                                const std::vector<double>& values, const RunCallback& on_run = {}) {
    if (values.empty()) throw ConfigError("sweep.values", "empty value list");
    (void)default_sweep_values(param);
    std::vector<TableRow> rows;
    for (double v : values)
        for (std::uint64_t seed : spec.seeds) {
            TrainConfig c = spec.train;
            (param == "gamma" ? c.loss_config.gamma : c.loss_config.lambda) = v;
            RunRecord rec = run_one<T>(ds, spec, c, param + "=" + fmt_value(v), seed);
            rows.push_back({fmt_value(v), seed, rec.result.final_metrics()});
            if (on_run) on_run(rec);
        }
    return rows;
}

/// `item_id,class_id,style_id,e0,...` with one row per dataset item.
template <typename T>
void write_embeddings_csv(std::ostream& os, const StyleDataset& ds, const Tensor<T>& emb) {
    os << "item_id,class_id,style_id";
    for (std::size_t j = 0; j < emb.cols(); ++j) os << ",e" << j;
    os << "\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        os << i << "," << ds.items[i].class_id << "," << ds.items[i].style_id;
        for (std::size_t j = 0; j < emb.cols(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(emb(i, j)));
            os << buf;
        }
        os << "\n";
    }
}

} // namespace hystar

#include "selfrepair/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <queue>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "detail.hpp"
#include "selfrepair/attribution.hpp"
#include "selfrepair/corpus.hpp"
#include "selfrepair/errors.hpp"
#include "selfrepair/forward.hpp"
#include "selfrepair/intervention.hpp"
#include "selfrepair/metrics.hpp"
#include "selfrepair/neurons.hpp"

namespace selfrepair {

namespace {

constexpr const char* kSchemaVersion = "1";

// ---------------------------------------------------------------------------
// shared machinery
// ---------------------------------------------------------------------------

// Runs fn(i) for i in [0, n) on `threads` workers; fn writes only to its own
// slot. The caller reduces slots in index order, so results never depend on
// scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex error_mutex;
    std::exception_ptr error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct Prepared {
    Model model;
    Corpus corpus;
    std::vector<ComponentId> targets;
    std::vector<std::vector<int>> batches; // indices into corpus.sequences
    int threads = 1;
    std::int64_t scoring_positions = 0;
};

Prepared prepare(const ExperimentConfig& cfg, const std::string& kind) {
    cfg.validate_for(kind);

    Model model = cfg.model_path.empty() ? init_toy_model(cfg.toy_config, *cfg.toy_seed)
                                         : load_model(cfg.model_path);
    const ModelConfig& mc = model.config();

    Corpus corpus = load_corpus(cfg.corpus_path, mc.vocab_size);
    if (corpus.sequences.empty()) throw DataError(cfg.corpus_path + ": corpus has no sequences");
    for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
        TokenSequence& seq = corpus.sequences[s];
        if (seq.length() > mc.max_seq) {
            if (!cfg.truncate)
                throw DataError(cfg.corpus_path + ": sequence " + std::to_string(s) +
                                " has length " + std::to_string(seq.length()) +
                                " > max_seq " + std::to_string(mc.max_seq) +
                                " (set truncate = true to cut)");
            seq.ids.resize(static_cast<std::size_t>(mc.max_seq));
        }
    }

    std::vector<ComponentId> targets = cfg.targets;
    if (targets.empty())
        for (int l = 0; l < mc.n_layers; ++l)
            for (int h = 0; h < mc.n_heads; ++h) targets.push_back(ComponentId::head(l, h));
    for (const ComponentId& t : targets) t.validate(mc);

    Prepared prep{std::move(model), std::move(corpus), std::move(targets), {}, 1, 0};
    const int n = static_cast<int>(prep.corpus.sequences.size());
    for (int i = 0; i < n; i += cfg.batch_size) {
        std::vector<int> batch;
        for (int j = i; j < std::min(n, i + cfg.batch_size); ++j) batch.push_back(j);
        prep.batches.push_back(std::move(batch));
    }
    // A trailing single-sequence batch cannot pair for resample ablation.
    if (prep.batches.size() > 1 && prep.batches.back().size() == 1) {
        prep.batches[prep.batches.size() - 2].push_back(prep.batches.back()[0]);
        prep.batches.pop_back();
    }
    prep.threads = cfg.threads > 0
                       ? cfg.threads
                       : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    prep.scoring_positions = prep.corpus.scoring_positions();
    return prep;
}

void stamp_metadata(ResultsTable& table, const ExperimentConfig& cfg, const Prepared& prep,
                    const std::string& kind) {
    table.set_meta("schema_version", std::string(kSchemaVersion));
    table.set_meta("tool", std::string("selfrepair"));
    table.set_meta("kind", kind);
    table.set_meta("seed", static_cast<std::int64_t>(cfg.seed));
    table.set_meta("model_hash", detail::hex_u64(prep.model.weight_hash()));
    table.set_meta("corpus_hash", detail::hex_u64(prep.corpus.file_hash));
    table.set_meta("sequences", static_cast<std::int64_t>(prep.corpus.sequences.size()));
    table.set_meta("scoring_positions", prep.scoring_positions);
    table.set_meta("config", cfg.echo());
}

std::filesystem::path side_path(const ExperimentConfig& cfg, const std::string& suffix) {
    std::filesystem::path p(cfg.output_path);
    const std::string ext = p.extension().string();
    p.replace_extension();
    p += "." + suffix;
    p += ext.empty() ? ("." + cfg.format) : ext;
    return p;
}

// Bounded selector for the top ceil(fraction*N) tokens of one head, ordered by
// direct effect descending with (sequence, position) ascending tie-breaks.
struct TokenScore {
    double de;
    std::int64_t seq;
    std::int32_t pos;
};

bool score_better(const TokenScore& a, const TokenScore& b) {
    if (a.de != b.de) return a.de > b.de;
    if (a.seq != b.seq) return a.seq < b.seq;
    return a.pos < b.pos;
}

class TopTokenSelector {
public:
    explicit TopTokenSelector(std::int64_t keep) : keep_(keep) {}

    void offer(const TokenScore& s) {
        if (keep_ <= 0) return;
        if (static_cast<std::int64_t>(heap_.size()) < keep_) {
            heap_.push(s);
        } else if (score_better(s, heap_.top())) {
            heap_.pop();
            heap_.push(s);
        }
    }

    std::unordered_set<std::uint64_t> keys() const {
        auto copy = heap_;
        std::unordered_set<std::uint64_t> out;
        while (!copy.empty()) {
            out.insert(token_key(copy.top().seq, copy.top().pos));
            copy.pop();
        }
        return out;
    }

    std::vector<TokenScore> sorted_entries() const {
        auto copy = heap_;
        std::vector<TokenScore> out;
        while (!copy.empty()) {
            out.push_back(copy.top());
            copy.pop();
        }
        std::sort(out.begin(), out.end(), score_better);
        return out;
    }

    static std::uint64_t token_key(std::int64_t seq, std::int32_t pos) {
        return (static_cast<std::uint64_t>(seq) << 20) | static_cast<std::uint32_t>(pos);
    }

private:
    struct WorstOnTop {
        bool operator()(const TokenScore& a, const TokenScore& b) const {
            return score_better(a, b); // "less" = better, so top() is the worst kept
        }
    };

    std::int64_t keep_;
    std::priority_queue<TokenScore, std::vector<TokenScore>, WorstOnTop> heap_;
};

// Per-sequence clean direct effects for every target, gathered in one pass.
struct CleanPassResult {
    // de[target][pos]
    std::vector<std::vector<double>> de;
    std::vector<double> head_mean_partial; // [n_layers*n_heads*d_model], filled if wanted
    std::int64_t positions = 0;
};

CleanPassResult clean_pass(const Model& model, const TokenSequence& tokens,
                           std::span<const ComponentId> targets, bool accumulate_means) {
    const ForwardTrace trace = forward(model, tokens);
    const ModelConfig& c = model.config();
    CleanPassResult out;
    out.positions = trace.scoring_positions();
    out.de.assign(targets.size(), {});
    for (auto& v : out.de) v.resize(static_cast<std::size_t>(out.positions));
    for (int pos = 0; pos < out.positions; ++pos) {
        const FoldedReadout readout = fold_readout(model, trace, pos);
        for (std::size_t t = 0; t < targets.size(); ++t)
            out.de[t][static_cast<std::size_t>(pos)] =
                readout.contribution(trace.head_at(targets[t].layer, targets[t].index, pos));
    }
    if (accumulate_means) {
        out.head_mean_partial.assign(
            static_cast<std::size_t>(c.n_layers) * c.n_heads * c.d_model, 0.0);
        for (int l = 0; l < c.n_layers; ++l)
            for (int h = 0; h < c.n_heads; ++h) {
                double* dst = &out.head_mean_partial[(static_cast<std::size_t>(l) * c.n_heads + h) *
                                                     static_cast<std::size_t>(c.d_model)];
                for (int k = 0; k < trace.seq_len; ++k) {
                    const auto v = trace.head_at(l, h, k);
                    for (int d = 0; d < c.d_model; ++d) dst[d] += v[static_cast<std::size_t>(d)];
                }
            }
    }
    return out;
}

struct SelectionResult {
    std::vector<std::unordered_set<std::uint64_t>> member; // per target
    std::int64_t keep = 0;
    HeadMeans means; // populated when requested
    bool has_means = false;
};

// First pass over the corpus: per-head top-fraction token sets (and, when mean
// ablation is in play, the per-head mean output vectors).
SelectionResult selection_pass(const Prepared& prep, const ExperimentConfig& cfg,
                               bool want_means) {
    const ModelConfig& c = prep.model.config();
    SelectionResult sel;
    sel.keep = top_percentile_count(cfg.fraction, prep.scoring_positions);
    std::vector<TopTokenSelector> selectors(prep.targets.size(), TopTokenSelector(sel.keep));

    std::vector<double> mean_acc;
    std::int64_t mean_samples = 0;
    if (want_means)
        mean_acc.assign(static_cast<std::size_t>(c.n_layers) * c.n_heads * c.d_model, 0.0);

    for (const std::vector<int>& batch : prep.batches) {
        std::vector<CleanPassResult> slots(batch.size());
        parallel_for(static_cast<int>(batch.size()), prep.threads, [&](int i) {
            slots[static_cast<std::size_t>(i)] =
                clean_pass(prep.model, prep.corpus.sequences[static_cast<std::size_t>(
                                           batch[static_cast<std::size_t>(i)])],
                           prep.targets, want_means);
        });
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const CleanPassResult& r = slots[i];
            const std::int64_t seq_id = batch[i];
            for (std::size_t t = 0; t < prep.targets.size(); ++t)
                for (std::int64_t pos = 0; pos < r.positions; ++pos)
                    selectors[t].offer({r.de[t][static_cast<std::size_t>(pos)], seq_id,
                                        static_cast<std::int32_t>(pos)});
            if (want_means) {
                for (std::size_t d = 0; d < mean_acc.size(); ++d)
                    mean_acc[d] += r.head_mean_partial[d];
                mean_samples +=
                    prep.corpus.sequences[static_cast<std::size_t>(seq_id)].length();
            }
        }
    }
    sel.member.reserve(selectors.size());
    for (const TopTokenSelector& s : selectors) sel.member.push_back(s.keys());
    if (want_means) {
        sel.has_means = true;
        sel.means.n_layers = c.n_layers;
        sel.means.n_heads = c.n_heads;
        sel.means.d_model = c.d_model;
        sel.means.n_samples = mean_samples;
        sel.means.mean.resize(mean_acc.size());
        for (std::size_t i = 0; i < mean_acc.size(); ++i)
            sel.means.mean[i] =
                static_cast<float>(mean_acc[i] / static_cast<double>(mean_samples));
    }
    return sel;
}

InterventionSpec make_spec(const std::string& mode, const ComponentId& target,
                           const SelectionResult& sel, const ForwardTrace* source,
                           bool freeze_downstream = false, bool freeze_final_scale = false) {
    InterventionSpec spec;
    spec.target = target;
    spec.freeze_downstream = freeze_downstream;
    spec.freeze_final_scale = freeze_final_scale;
    if (mode == "zero") {
        spec.mode = AblationMode::zero();
    } else if (mode == "mean") {
        const auto v = sel.means.at(target.layer, target.index);
        spec.mode = AblationMode::mean(std::vector<float>(v.begin(), v.end()));
    } else if (mode == "resample") {
        spec.mode = AblationMode::resample(*source);
    } else {
        throw ConfigError("unknown ablation mode: " + mode);
    }
    return spec;
}

std::vector<int> batch_pairing(const ExperimentConfig& cfg, int batch_size) {
    if (batch_size < 2)
        throw DataError("resample ablation needs at least two sequences per batch");
    return cfg.resample_shuffle ? resample_pairing(batch_size, cfg.seed)
                                : resample_pairing(batch_size);
}

Cell c_str(const std::string& s) { return Cell(s); }
Cell c_i(std::int64_t v) { return Cell(v); }
Cell c_f(double v) { return Cell(v); }

// ---------------------------------------------------------------------------
// head sweep
// ---------------------------------------------------------------------------

struct HeadAgg {
    std::int64_t n = 0;
    double sum_de = 0.0, sum_dlogit = 0.0, sum_dde = 0.0, sum_sr = 0.0;
    std::int64_t n_top = 0;
    double top_sum_de = 0.0, top_sum_dlogit = 0.0, top_sum_dde = 0.0, top_sum_sr = 0.0;
    std::int64_t top_ratio_gt1 = 0;
    double max_decomp = 0.0, max_recon = 0.0;
};

struct SweepSeqResult {
    std::vector<HeadAgg> per_head;
    std::vector<std::vector<Cell>> token_rows;
};

} // namespace

ExperimentOutput run_head_sweep(const ExperimentConfig& cfg) {
    const std::string kind = "head-sweep";
    Prepared prep = prepare(cfg, kind);
    const std::string mode = cfg.ablation[0];
    SelectionResult sel = selection_pass(prep, cfg, mode == "mean");

    const std::vector<std::string> token_columns = {
        "head",        "ablation",   "sequence",      "position", "de_clean",
        "de_ablated",  "logit_clean", "logit_ablated", "delta_logit", "delta_de",
        "self_repair", "ln_ratio",   "in_top_fraction", "downstream_breakage"};
    std::optional<StreamingTableWriter> token_writer;
    ExperimentOutput output{ResultsTable({}), {}, {}};
    if (cfg.emit_tokens) {
        token_writer.emplace(token_columns, side_path(cfg, "tokens"),
                             export_format_from_string(cfg.format));
        output.streamed.push_back(token_writer->path());
    }

    std::vector<HeadAgg> agg(prep.targets.size());
    for (const std::vector<int>& batch : prep.batches) {
        const int bsz = static_cast<int>(batch.size());
        std::vector<ForwardTrace> cleans(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            cleans[static_cast<std::size_t>(i)] = forward(
                prep.model,
                prep.corpus.sequences[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]);
        });
        std::vector<int> pairing;
        if (mode == "resample") pairing = batch_pairing(cfg, bsz);

        std::vector<SweepSeqResult> slots(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            const std::int64_t seq_id = batch[static_cast<std::size_t>(i)];
            const TokenSequence& tokens =
                prep.corpus.sequences[static_cast<std::size_t>(seq_id)];
            const ForwardTrace& clean = cleans[static_cast<std::size_t>(i)];
            SweepSeqResult& res = slots[static_cast<std::size_t>(i)];
            res.per_head.resize(prep.targets.size());

            ForwardTrace ablated; // buffers recycled across head targets
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                const ComponentId& head = prep.targets[t];
                const ForwardTrace* source =
                    mode == "resample"
                        ? &cleans[static_cast<std::size_t>(pairing[static_cast<std::size_t>(i)])]
                        : nullptr;
                const InterventionSpec spec = make_spec(mode, head, sel, source,
                                                        cfg.freeze_downstream,
                                                        cfg.freeze_final_scale);
                ablated =
                    run_with_intervention(prep.model, tokens, spec, &clean, std::move(ablated));
                HeadAgg& a = res.per_head[t];
                a.max_recon = std::max(a.max_recon, residual_reconstruction_check(ablated));
                for (int pos = 0; pos < clean.scoring_positions(); ++pos) {
                    const SelfRepairRecord rec =
                        self_repair(prep.model, clean, ablated, head, pos, seq_id);
                    ++a.n;
                    a.sum_de += rec.de_clean;
                    a.sum_dlogit += rec.delta_logit;
                    a.sum_dde += rec.delta_de;
                    a.sum_sr += rec.self_repair;
                    const bool in_top = sel.member[t].count(TopTokenSelector::token_key(
                                            seq_id, static_cast<std::int32_t>(pos))) != 0;
                    if (in_top) {
                        ++a.n_top;
                        a.top_sum_de += rec.de_clean;
                        a.top_sum_dlogit += rec.delta_logit;
                        a.top_sum_dde += rec.delta_de;
                        a.top_sum_sr += rec.self_repair;
                        if (rec.ln_ratio > 1.0) ++a.top_ratio_gt1;
                    }
                    a.max_decomp = std::max(
                        a.max_decomp,
                        std::abs(direct_effect_all(prep.model, ablated, pos).closure_residual()));
                    if (cfg.emit_tokens) {
                        res.token_rows.push_back(
                            {c_str(head.str()), c_str(mode), c_i(seq_id), c_i(pos),
                             c_f(rec.de_clean), c_f(rec.de_ablated), c_f(rec.logit_clean),
                             c_f(rec.logit_ablated), c_f(rec.delta_logit), c_f(rec.delta_de),
                             c_f(rec.self_repair), c_f(rec.ln_ratio), c_i(in_top ? 1 : 0),
                             c_i(rec.downstream_breakage() ? 1 : 0)});
                    }
                }
            }
        });
        for (int i = 0; i < bsz; ++i) {
            const SweepSeqResult& res = slots[static_cast<std::size_t>(i)];
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                const HeadAgg& src = res.per_head[t];
                HeadAgg& dst = agg[t];
                dst.n += src.n;
                dst.sum_de += src.sum_de;
                dst.sum_dlogit += src.sum_dlogit;
                dst.sum_dde += src.sum_dde;
                dst.sum_sr += src.sum_sr;
                dst.n_top += src.n_top;
                dst.top_sum_de += src.top_sum_de;
                dst.top_sum_dlogit += src.top_sum_dlogit;
                dst.top_sum_dde += src.top_sum_dde;
                dst.top_sum_sr += src.top_sum_sr;
                dst.top_ratio_gt1 += src.top_ratio_gt1;
                dst.max_decomp = std::max(dst.max_decomp, src.max_decomp);
                dst.max_recon = std::max(dst.max_recon, src.max_recon);
            }
            if (token_writer)
                for (const auto& row : res.token_rows) token_writer->add_row(row);
        }
    }

    ResultsTable table({"head", "ablation", "n_tokens", "mean_de_clean", "mean_delta_logit",
                        "mean_delta_de", "mean_self_repair", "n_top", "mean_de_clean_top",
                        "mean_delta_logit_top", "mean_delta_de_top", "mean_self_repair_top",
                        "frac_ln_ratio_gt_one_top", "max_decomp_residual", "max_recon_error"});
    for (std::size_t t = 0; t < prep.targets.size(); ++t) {
        const HeadAgg& a = agg[t];
        const double n = static_cast<double>(std::max<std::int64_t>(1, a.n));
        const double nt = static_cast<double>(std::max<std::int64_t>(1, a.n_top));
        table.add_row({c_str(prep.targets[t].str()), c_str(mode), c_i(a.n), c_f(a.sum_de / n),
                       c_f(a.sum_dlogit / n), c_f(a.sum_dde / n), c_f(a.sum_sr / n), c_i(a.n_top),
                       c_f(a.top_sum_de / nt), c_f(a.top_sum_dlogit / nt), c_f(a.top_sum_dde / nt),
                       c_f(a.top_sum_sr / nt),
                       c_f(static_cast<double>(a.top_ratio_gt1) / nt), c_f(a.max_decomp),
                       c_f(a.max_recon)});
    }
    stamp_metadata(table, cfg, prep, kind);
    table.set_meta("top_k_per_head", sel.keep);
    if (token_writer) {
        token_writer->set_meta("schema_version", std::string(kSchemaVersion));
        token_writer->set_meta("kind", std::string("head-sweep.tokens"));
        token_writer->set_meta("config", cfg.echo());
        token_writer->close();
    }
    output.primary = std::move(table);
    return output;
}

// ---------------------------------------------------------------------------
// ln analysis
// ---------------------------------------------------------------------------

namespace {

struct LnSeqResult {
    // records[target][mode]: per selected token of this sequence
    std::vector<std::vector<std::vector<SelfRepairRecord>>> records;
    std::vector<std::vector<std::vector<BreakdownRecord>>> breakdowns;
    std::vector<std::vector<std::vector<double>>> two_term_residuals;
    std::vector<std::vector<std::vector<Cell>>> token_rows; // flattened later
    std::vector<std::vector<double>> max_decomp;            // [target][mode]
    std::vector<std::vector<double>> max_recon;
};

} // namespace

ExperimentOutput run_ln_experiment(const ExperimentConfig& cfg) {
    const std::string kind = "ln-analysis";
    Prepared prep = prepare(cfg, kind);
    const bool wants_mean =
        std::find(cfg.ablation.begin(), cfg.ablation.end(), "mean") != cfg.ablation.end();
    SelectionResult sel = selection_pass(prep, cfg, wants_mean);
    const auto n_modes = cfg.ablation.size();

    // Selected records per (target, mode), gathered in sequence order.
    std::vector<std::vector<std::vector<SelfRepairRecord>>> records(
        prep.targets.size(), std::vector<std::vector<SelfRepairRecord>>(n_modes));
    std::vector<std::vector<std::vector<BreakdownRecord>>> breakdowns(
        prep.targets.size(), std::vector<std::vector<BreakdownRecord>>(n_modes));
    std::vector<std::vector<std::vector<double>>> residuals(
        prep.targets.size(), std::vector<std::vector<double>>(n_modes));
    std::vector<std::vector<double>> max_decomp(prep.targets.size(),
                                                std::vector<double>(n_modes, 0.0));
    std::vector<std::vector<double>> max_recon(prep.targets.size(),
                                               std::vector<double>(n_modes, 0.0));

    const std::vector<std::string> token_columns = {
        "head",    "ablation", "sequence",     "position",   "de_clean", "s_clean",
        "s_ablated", "ln_ratio", "ln_term",      "self_repair", "two_term_residual"};
    std::optional<StreamingTableWriter> token_writer;
    ExperimentOutput output{ResultsTable({}), {}, {}};
    if (cfg.emit_tokens) {
        token_writer.emplace(token_columns, side_path(cfg, "tokens"),
                             export_format_from_string(cfg.format));
        output.streamed.push_back(token_writer->path());
    }

    for (const std::vector<int>& batch : prep.batches) {
        const int bsz = static_cast<int>(batch.size());
        std::vector<ForwardTrace> cleans(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            cleans[static_cast<std::size_t>(i)] = forward(
                prep.model,
                prep.corpus.sequences[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]);
        });
        const bool wants_resample = std::find(cfg.ablation.begin(), cfg.ablation.end(),
                                              "resample") != cfg.ablation.end();
        std::vector<int> pairing;
        if (wants_resample) pairing = batch_pairing(cfg, bsz);

        std::vector<LnSeqResult> slots(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            const std::int64_t seq_id = batch[static_cast<std::size_t>(i)];
            const TokenSequence& tokens =
                prep.corpus.sequences[static_cast<std::size_t>(seq_id)];
            const ForwardTrace& clean = cleans[static_cast<std::size_t>(i)];
            LnSeqResult& res = slots[static_cast<std::size_t>(i)];
            res.records.assign(prep.targets.size(),
                               std::vector<std::vector<SelfRepairRecord>>(n_modes));
            res.breakdowns.assign(prep.targets.size(),
                                  std::vector<std::vector<BreakdownRecord>>(n_modes));
            res.two_term_residuals.assign(prep.targets.size(),
                                          std::vector<std::vector<double>>(n_modes));
            res.token_rows.assign(prep.targets.size(), {});
            res.max_decomp.assign(prep.targets.size(), std::vector<double>(n_modes, 0.0));
            res.max_recon.assign(prep.targets.size(), std::vector<double>(n_modes, 0.0));

            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                const ComponentId& head = prep.targets[t];
                // Selected positions of this sequence, ascending.
                std::vector<int> positions;
                for (int pos = 0; pos < clean.scoring_positions(); ++pos)
                    if (sel.member[t].count(TopTokenSelector::token_key(
                            seq_id, static_cast<std::int32_t>(pos))))
                        positions.push_back(pos);
                if (positions.empty()) continue;

                for (std::size_t m = 0; m < n_modes; ++m) {
                    const std::string& mode = cfg.ablation[m];
                    const ForwardTrace* source =
                        mode == "resample" ? &cleans[static_cast<std::size_t>(
                                                 pairing[static_cast<std::size_t>(i)])]
                                           : nullptr;
                    const ForwardTrace ablated = run_with_intervention(
                        prep.model, tokens, make_spec(mode, head, sel, source), &clean);
                    // Companion run with downstream frozen: only the final
                    // scale moves, so the two-term identity applies.
                    const ForwardTrace frozen = run_with_intervention(
                        prep.model, tokens, make_spec(mode, head, sel, source, true), &clean);
                    res.max_recon[t][m] =
                        std::max(res.max_recon[t][m], residual_reconstruction_check(ablated));
                    for (int pos : positions) {
                        SelfRepairRecord rec =
                            self_repair(prep.model, clean, ablated, head, pos, seq_id);
                        BreakdownRecord br =
                            breakdown(prep.model, clean, ablated, head, pos, seq_id);
                        const SelfRepairRecord frozen_rec =
                            self_repair(prep.model, clean, frozen, head, pos, seq_id);
                        const double pred =
                            ln_two_term_prediction(prep.model, clean, frozen, head, pos);
                        const double two_term_residual =
                            std::abs(pred - frozen_rec.delta_logit);
                        res.max_decomp[t][m] = std::max(
                            res.max_decomp[t][m],
                            std::abs(
                                direct_effect_all(prep.model, ablated, pos).closure_residual()));
                        if (cfg.emit_tokens)
                            res.token_rows[t].push_back(
                                {c_str(head.str()), c_str(mode), c_i(seq_id), c_i(pos),
                                 c_f(rec.de_clean), c_f(clean.scale_at(pos)),
                                 c_f(ablated.scale_at(pos)), c_f(rec.ln_ratio), c_f(br.ln_term),
                                 c_f(rec.self_repair), c_f(two_term_residual)});
                        res.records[t][m].push_back(std::move(rec));
                        res.breakdowns[t][m].push_back(std::move(br));
                        res.two_term_residuals[t][m].push_back(two_term_residual);
                    }
                }
            }
        });
        for (int i = 0; i < bsz; ++i) {
            LnSeqResult& res = slots[static_cast<std::size_t>(i)];
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                for (std::size_t m = 0; m < n_modes; ++m) {
                    auto& dst = records[t][m];
                    for (auto& r : res.records[t][m]) dst.push_back(std::move(r));
                    auto& dstb = breakdowns[t][m];
                    for (auto& b : res.breakdowns[t][m]) dstb.push_back(std::move(b));
                    auto& dstr = residuals[t][m];
                    for (double r : res.two_term_residuals[t][m]) dstr.push_back(r);
                }
                if (token_writer)
                    for (const auto& row : res.token_rows[t]) token_writer->add_row(row);
                for (std::size_t m = 0; m < n_modes; ++m) {
                    max_decomp[t][m] = std::max(max_decomp[t][m], res.max_decomp[t][m]);
                    max_recon[t][m] = std::max(max_recon[t][m], res.max_recon[t][m]);
                }
            }
        }
    }

    std::vector<std::string> columns = {"head",
                                        "ablation",
                                        "n_top",
                                        "frac_ln_ratio_gt_one",
                                        "clipped_ln_fraction",
                                        "clipped_ln_skipped",
                                        "mean_ln_term",
                                        "max_two_term_residual",
                                        "max_decomp_residual",
                                        "max_recon_error",
                                        "hist_underflow"};
    for (int b = 0; b < LnRatioStats::kHistBins; ++b)
        columns.push_back("hist_" + std::to_string(b));
    columns.push_back("hist_overflow");
    if (cfg.emit_unclipped) columns.push_back("unclipped_ln_fraction");
    ResultsTable table(columns);

    // Pooled and per-layer aggregations of the clipped fraction are both
    // reported, since per-head averages and pooled tokens can differ.
    double pooled_sum = 0.0;
    std::int64_t pooled_n = 0;
    std::map<int, std::pair<double, std::int64_t>> layer_sums;

    for (std::size_t t = 0; t < prep.targets.size(); ++t) {
        for (std::size_t m = 0; m < n_modes; ++m) {
            const auto& recs = records[t][m];
            if (recs.empty()) continue;
            const LnRatioStats stats = ln_ratio_stats(recs);
            const ClippedLnFraction clipped = clipped_ln_fraction(recs, breakdowns[t][m]);
            double sum_ln = 0.0;
            for (const BreakdownRecord& b : breakdowns[t][m]) sum_ln += b.ln_term;
            double worst_residual = 0.0;
            for (double r : residuals[t][m]) worst_residual = std::max(worst_residual, r);

            std::vector<Cell> row = {c_str(prep.targets[t].str()),
                                     c_str(cfg.ablation[m]),
                                     c_i(static_cast<std::int64_t>(recs.size())),
                                     c_f(stats.fraction_gt_one),
                                     c_f(clipped.mean),
                                     c_i(clipped.n_skipped),
                                     c_f(sum_ln / static_cast<double>(recs.size())),
                                     c_f(worst_residual),
                                     c_f(max_decomp[t][m]),
                                     c_f(max_recon[t][m]),
                                     c_i(stats.underflow)};
            for (std::int64_t count : stats.histogram) row.push_back(c_i(count));
            row.push_back(c_i(stats.overflow));
            if (cfg.emit_unclipped) {
                double sum = 0.0;
                std::int64_t n = 0;
                for (std::size_t i = 0; i < recs.size(); ++i)
                    if (recs[i].de_clean != 0.0) {
                        sum += breakdowns[t][m][i].ln_term / recs[i].de_clean;
                        ++n;
                    }
                row.push_back(c_f(n > 0 ? sum / static_cast<double>(n) : 0.0));
            }
            table.add_row(std::move(row));

            pooled_sum += clipped.mean * static_cast<double>(clipped.n_used);
            pooled_n += clipped.n_used;
            auto& ls = layer_sums[prep.targets[t].layer];
            ls.first += clipped.mean * static_cast<double>(clipped.n_used);
            ls.second += clipped.n_used;
        }
    }
    stamp_metadata(table, cfg, prep, kind);
    table.set_meta("top_k_per_head", sel.keep);
    table.set_meta("hist_lo", LnRatioStats::kHistLo);
    table.set_meta("hist_hi", LnRatioStats::kHistHi);
    table.set_meta("clipped_ln_fraction_pooled",
                   pooled_n > 0 ? pooled_sum / static_cast<double>(pooled_n) : 0.0);
    {
        std::vector<std::pair<std::string, std::string>> by_layer;
        for (const auto& [layer, sums] : layer_sums)
            by_layer.emplace_back("layer_" + std::to_string(layer),
                                  detail::format_double(sums.second > 0
                                                            ? sums.first /
                                                                  static_cast<double>(sums.second)
                                                            : 0.0));
        table.set_meta("clipped_ln_fraction_by_layer", by_layer);
    }
    table.set_meta("note", std::string("heads with near-zero direct effect are included"));
    if (token_writer) {
        token_writer->set_meta("schema_version", std::string(kSchemaVersion));
        token_writer->set_meta("kind", std::string("ln-analysis.tokens"));
        token_writer->set_meta("config", cfg.echo());
        token_writer->close();
    }
    output.primary = std::move(table);
    return output;
}

// ---------------------------------------------------------------------------
// breakdown
// ---------------------------------------------------------------------------

ExperimentOutput run_breakdown_experiment(const ExperimentConfig& cfg) {
    const std::string kind = "breakdown";
    Prepared prep = prepare(cfg, kind);
    const std::string mode = cfg.ablation[0];
    SelectionResult sel = selection_pass(prep, cfg, mode == "mean");

    struct Row {
        std::size_t target;
        std::int64_t seq;
        int pos;
        SelfRepairRecord rec;
        BreakdownRecord br;
        double decomp, recon;
    };
    std::vector<Row> rows;

    for (const std::vector<int>& batch : prep.batches) {
        const int bsz = static_cast<int>(batch.size());
        std::vector<ForwardTrace> cleans(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            cleans[static_cast<std::size_t>(i)] = forward(
                prep.model,
                prep.corpus.sequences[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]);
        });
        std::vector<int> pairing;
        if (mode == "resample") pairing = batch_pairing(cfg, bsz);

        std::vector<std::vector<Row>> slots(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            const std::int64_t seq_id = batch[static_cast<std::size_t>(i)];
            const TokenSequence& tokens =
                prep.corpus.sequences[static_cast<std::size_t>(seq_id)];
            const ForwardTrace& clean = cleans[static_cast<std::size_t>(i)];
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                const ComponentId& head = prep.targets[t];
                std::vector<int> positions;
                for (int pos = 0; pos < clean.scoring_positions(); ++pos)
                    if (sel.member[t].count(TopTokenSelector::token_key(
                            seq_id, static_cast<std::int32_t>(pos))))
                        positions.push_back(pos);
                if (positions.empty()) continue;
                const ForwardTrace* source =
                    mode == "resample"
                        ? &cleans[static_cast<std::size_t>(pairing[static_cast<std::size_t>(i)])]
                        : nullptr;
                const ForwardTrace ablated = run_with_intervention(
                    prep.model, tokens,
                    make_spec(mode, head, sel, source, cfg.freeze_downstream,
                              cfg.freeze_final_scale),
                    &clean);
                const double recon = residual_reconstruction_check(ablated);
                for (int pos : positions) {
                    Row row{t,
                            seq_id,
                            pos,
                            self_repair(prep.model, clean, ablated, head, pos, seq_id),
                            breakdown(prep.model, clean, ablated, head, pos, seq_id),
                            std::abs(
                                direct_effect_all(prep.model, ablated, pos).closure_residual()),
                            recon};
                    slots[static_cast<std::size_t>(i)].push_back(std::move(row));
                }
            }
        });
        for (int i = 0; i < bsz; ++i)
            for (Row& row : slots[static_cast<std::size_t>(i)]) rows.push_back(std::move(row));
    }

    // Canonical order: head, then sequence, then position.
    std::sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
        if (a.target != b.target) return prep.targets[a.target] < prep.targets[b.target];
        if (a.seq != b.seq) return a.seq < b.seq;
        return a.pos < b.pos;
    });

    ResultsTable table({"head", "ablation", "sequence", "position", "de_clean", "de_ablated",
                        "logit_clean", "logit_ablated", "delta_logit", "delta_de", "self_repair",
                        "downstream_breakage", "heads_term", "mlp_term", "ln_term",
                        "closure_residual", "decomp_residual", "recon_error"});
    for (const Row& row : rows) {
        table.add_row({c_str(prep.targets[row.target].str()), c_str(mode), c_i(row.seq),
                       c_i(row.pos), c_f(row.rec.de_clean), c_f(row.rec.de_ablated),
                       c_f(row.rec.logit_clean), c_f(row.rec.logit_ablated),
                       c_f(row.rec.delta_logit), c_f(row.rec.delta_de), c_f(row.rec.self_repair),
                       c_i(row.rec.downstream_breakage() ? 1 : 0), c_f(row.br.heads_term),
                       c_f(row.br.mlp_term), c_f(row.br.ln_term), c_f(row.br.closure_residual()),
                       c_f(row.decomp), c_f(row.recon)});
    }
    stamp_metadata(table, cfg, prep, kind);
    table.set_meta("top_k_per_head", sel.keep);
    return {std::move(table), {}, {}};
}

// ---------------------------------------------------------------------------
// neuron analysis
// ---------------------------------------------------------------------------

ExperimentOutput run_neuron_experiment(const ExperimentConfig& cfg) {
    const std::string kind = "neuron-analysis";
    Prepared prep = prepare(cfg, kind);
    const ModelConfig& mc = prep.model.config();
    const std::string mode = cfg.ablation[0];
    const int layer = cfg.neuron_layer < 0 ? mc.n_layers - 1 : cfg.neuron_layer;
    if (layer < 0 || layer >= mc.n_layers)
        throw ConfigError("neuron_layer out of range");
    for (const ComponentId& head : prep.targets) {
        const int first_downstream = mc.parallel_attention ? head.layer + 1 : head.layer;
        if (layer < first_downstream)
            throw ConfigError("MLP layer " + std::to_string(layer) + " is not downstream of " +
                              head.str());
    }
    SelectionResult sel = selection_pass(prep, cfg, mode == "mean");

    struct TokenEntry {
        std::int64_t seq;
        int pos;
        double head_de;
        double mlp_delta;
        double subsum_residual;
        double decomp_residual;
        double recon_error;
        std::vector<NeuronRepairRecord> records;
    };
    std::vector<std::vector<TokenEntry>> per_target(prep.targets.size());
    std::vector<std::int64_t> excluded_nonpositive(prep.targets.size(), 0);

    for (const std::vector<int>& batch : prep.batches) {
        const int bsz = static_cast<int>(batch.size());
        std::vector<ForwardTrace> cleans(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            cleans[static_cast<std::size_t>(i)] = forward(
                prep.model,
                prep.corpus.sequences[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]);
        });
        std::vector<int> pairing;
        if (mode == "resample") pairing = batch_pairing(cfg, bsz);

        std::vector<std::vector<std::vector<TokenEntry>>> slots(
            static_cast<std::size_t>(bsz),
            std::vector<std::vector<TokenEntry>>(prep.targets.size()));
        parallel_for(bsz, prep.threads, [&](int i) {
            const std::int64_t seq_id = batch[static_cast<std::size_t>(i)];
            const TokenSequence& tokens =
                prep.corpus.sequences[static_cast<std::size_t>(seq_id)];
            const ForwardTrace& clean = cleans[static_cast<std::size_t>(i)];
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                const ComponentId& head = prep.targets[t];
                std::vector<int> positions;
                for (int pos = 0; pos < clean.scoring_positions(); ++pos)
                    if (sel.member[t].count(TopTokenSelector::token_key(
                            seq_id, static_cast<std::int32_t>(pos))))
                        positions.push_back(pos);
                if (positions.empty()) continue;
                const ForwardTrace* source =
                    mode == "resample"
                        ? &cleans[static_cast<std::size_t>(pairing[static_cast<std::size_t>(i)])]
                        : nullptr;
                const ForwardTrace ablated = run_with_intervention(
                    prep.model, tokens, make_spec(mode, head, sel, source), &clean);
                const double recon = residual_reconstruction_check(ablated);
                for (int pos : positions) {
                    TokenEntry entry;
                    entry.seq = seq_id;
                    entry.pos = pos;
                    entry.recon_error = recon;
                    entry.decomp_residual =
                        std::abs(direct_effect_all(prep.model, ablated, pos).closure_residual());
                    const FoldedReadout readout = fold_readout(prep.model, clean, pos);
                    entry.head_de =
                        readout.contribution(clean.head_at(head.layer, head.index, pos));
                    entry.records = neuron_repair_table(prep.model, clean, ablated, layer, pos,
                                                        seq_id);
                    const double mlp_clean = readout.contribution(clean.mlp_at(layer, pos));
                    const double mlp_ablated = readout.contribution(ablated.mlp_at(layer, pos));
                    entry.mlp_delta = mlp_ablated - mlp_clean;
                    double neuron_sum = 0.0;
                    for (const NeuronRepairRecord& r : entry.records) neuron_sum += r.delta_de;
                    // The bias is constant, so its delta at clean scale is 0;
                    // keep it in the residual anyway.
                    const double bias_delta =
                        readout.contribution(ablated.mlp_bias_at(layer)) -
                        readout.contribution(clean.mlp_bias_at(layer));
                    entry.subsum_residual = std::abs(neuron_sum + bias_delta - entry.mlp_delta);
                    slots[static_cast<std::size_t>(i)][t].push_back(std::move(entry));
                }
            }
        });
        for (int i = 0; i < bsz; ++i)
            for (std::size_t t = 0; t < prep.targets.size(); ++t)
                for (TokenEntry& e : slots[static_cast<std::size_t>(i)][t]) {
                    // A non-positive head effect makes the fraction meaningless.
                    if (e.head_de <= 0.0) {
                        ++excluded_nonpositive[t];
                        continue;
                    }
                    per_target[t].push_back(std::move(e));
                }
    }

    ResultsTable matrix_table({"head", "rank", "f_050", "f_010", "f_005", "f_002", "f_001",
                               "n_tokens", "max_subsum_residual", "max_decomp_residual",
                               "max_recon_error"});
    ResultsTable curve_table({"head", "rank", "mean_cumulative_share", "n_tokens",
                              "degenerate_tokens"});
    ResultsTable overlap_table({"head", "neuron", "frequency"});
    std::optional<StreamingTableWriter> token_writer;
    ExperimentOutput output{ResultsTable({}), {}, {}};
    if (cfg.emit_tokens) {
        token_writer.emplace(
            std::vector<std::string>{"head", "sequence", "position", "head_de_clean", "top_neuron",
                                     "top_neuron_de_clean", "top_neuron_de_ablated",
                                     "top_neuron_delta_de", "mlp_delta_de", "subsum_residual",
                                     "erasure_class"},
            side_path(cfg, "tokens"), export_format_from_string(cfg.format));
        output.streamed.push_back(token_writer->path());
    }

    std::vector<std::pair<std::string, std::string>> overlap_meta;
    for (std::size_t t = 0; t < prep.targets.size(); ++t) {
        const std::string head_name = prep.targets[t].str();
        auto& entries = per_target[t];
        if (entries.empty()) continue;
        std::sort(entries.begin(), entries.end(), [](const TokenEntry& a, const TokenEntry& b) {
            if (a.seq != b.seq) return a.seq < b.seq;
            return a.pos < b.pos;
        });

        std::vector<std::vector<NeuronRepairRecord>> grouped;
        grouped.reserve(entries.size());
        double max_subsum = 0.0, max_decomp = 0.0, max_recon = 0.0;
        for (const TokenEntry& e : entries) {
            grouped.push_back(e.records);
            max_subsum = std::max(max_subsum, e.subsum_residual);
            max_decomp = std::max(max_decomp, e.decomp_residual);
            max_recon = std::max(max_recon, e.recon_error);
        }
        const ThresholdFrequencyMatrix matrix = threshold_frequency(grouped);
        for (std::size_t r = 0; r < matrix.ranks.size(); ++r) {
            matrix_table.add_row({c_str(head_name), c_i(matrix.ranks[r]),
                                  c_f(matrix.at(static_cast<int>(r), 0)),
                                  c_f(matrix.at(static_cast<int>(r), 1)),
                                  c_f(matrix.at(static_cast<int>(r), 2)),
                                  c_f(matrix.at(static_cast<int>(r), 3)),
                                  c_f(matrix.at(static_cast<int>(r), 4)), c_i(matrix.n_tokens),
                                  c_f(max_subsum), c_f(max_decomp), c_f(max_recon)});
        }

        std::vector<double> curve_sum(static_cast<std::size_t>(mc.d_mlp), 0.0);
        std::int64_t degenerate = 0;
        std::vector<std::vector<int>> top_sets;
        top_sets.reserve(entries.size());
        for (const TokenEntry& e : entries) {
            const CumulativeCurve curve = cumulative_abs_change(e.records);
            if (curve.degenerate) {
                ++degenerate;
            } else {
                for (std::size_t r = 0; r < curve.share.size(); ++r) curve_sum[r] += curve.share[r];
            }
            top_sets.push_back(top_repairing_neurons(e.records, 10));
        }
        const std::int64_t used = static_cast<std::int64_t>(entries.size()) - degenerate;
        for (int r = 0; r < mc.d_mlp; ++r)
            curve_table.add_row({c_str(head_name), c_i(r + 1),
                                 c_f(used > 0 ? curve_sum[static_cast<std::size_t>(r)] /
                                                    static_cast<double>(used)
                                              : 0.0),
                                 c_i(used), c_i(degenerate)});

        if (entries.size() >= 2) {
            const OverlapStats overlap = neuron_overlap(top_sets, 10);
            for (const auto& [neuron, freq] : overlap.frequency)
                overlap_table.add_row({c_str(head_name), c_i(neuron), c_f(freq)});
            overlap_meta.emplace_back(head_name + ".max_frequency",
                                      detail::format_double(overlap.max_frequency));
            overlap_meta.emplace_back(head_name + ".max_neuron",
                                      std::to_string(overlap.max_neuron));
            overlap_meta.emplace_back(head_name + ".short_sets",
                                      std::to_string(overlap.n_short_sets));
        }

        if (token_writer) {
            for (const TokenEntry& e : entries) {
                const NeuronRepairRecord& top = e.records.front();
                token_writer->add_row({c_str(head_name), c_i(e.seq), c_i(e.pos), c_f(e.head_de),
                                       c_i(top.neuron), c_f(top.de_clean_neuron),
                                       c_f(top.de_ablated_neuron), c_f(top.delta_de),
                                       c_f(e.mlp_delta), c_f(e.subsum_residual),
                                       c_str(to_string(classify_erasure(top)))});
            }
        }
    }

    stamp_metadata(matrix_table, cfg, prep, kind);
    matrix_table.set_meta("top_k_per_head", sel.keep);
    matrix_table.set_meta("neuron_layer", static_cast<std::int64_t>(layer));
    {
        std::int64_t total_excluded = 0;
        for (std::int64_t e : excluded_nonpositive) total_excluded += e;
        matrix_table.set_meta("excluded_nonpositive_head_de", total_excluded);
    }
    if (!overlap_meta.empty()) overlap_table.set_meta("summary", overlap_meta);
    overlap_table.set_meta("kind", std::string("neuron-analysis.overlap"));
    curve_table.set_meta("kind", std::string("neuron-analysis.curve"));
    if (token_writer) {
        token_writer->set_meta("schema_version", std::string(kSchemaVersion));
        token_writer->set_meta("kind", std::string("neuron-analysis.tokens"));
        token_writer->set_meta("config", cfg.echo());
        token_writer->close();
    }

    output.primary = std::move(matrix_table);
    output.extras.emplace_back("curve", std::move(curve_table));
    output.extras.emplace_back("overlap", std::move(overlap_table));
    return output;
}

// ---------------------------------------------------------------------------
// reinjection
// ---------------------------------------------------------------------------

ExperimentOutput run_reinjection_experiment(const ExperimentConfig& cfg) {
    const std::string kind = "reinjection";
    Prepared prep = prepare(cfg, kind);

    struct AlphaAgg {
        std::int64_t n = 0;
        double sum_clean = 0.0, sum_new = 0.0;
        double max_recon = 0.0, max_decomp = 0.0;
    };
    std::vector<std::vector<AlphaAgg>> agg(prep.targets.size(),
                                           std::vector<AlphaAgg>(cfg.alphas.size()));

    std::optional<StreamingTableWriter> token_writer;
    ExperimentOutput output{ResultsTable({}), {}, {}};
    if (cfg.emit_tokens) {
        token_writer.emplace(
            std::vector<std::string>{"head", "alpha", "sequence", "position", "de_clean", "de_new",
                                     "delta_de"},
            side_path(cfg, "tokens"), export_format_from_string(cfg.format));
        output.streamed.push_back(token_writer->path());
    }

    for (const std::vector<int>& batch : prep.batches) {
        const int bsz = static_cast<int>(batch.size());
        std::vector<ForwardTrace> cleans(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            cleans[static_cast<std::size_t>(i)] = forward(
                prep.model,
                prep.corpus.sequences[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]);
        });

        struct SeqResult {
            std::vector<std::vector<AlphaAgg>> agg;
            std::vector<std::vector<Cell>> rows;
        };
        std::vector<SeqResult> slots(static_cast<std::size_t>(bsz));
        parallel_for(bsz, prep.threads, [&](int i) {
            const std::int64_t seq_id = batch[static_cast<std::size_t>(i)];
            const TokenSequence& tokens =
                prep.corpus.sequences[static_cast<std::size_t>(seq_id)];
            const ForwardTrace& clean = cleans[static_cast<std::size_t>(i)];
            SeqResult& res = slots[static_cast<std::size_t>(i)];
            res.agg.assign(prep.targets.size(), std::vector<AlphaAgg>(cfg.alphas.size()));
            for (std::size_t t = 0; t < prep.targets.size(); ++t) {
                for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
                    const ReinjectionResult rr = reinject_head(prep.model, tokens,
                                                               prep.targets[t], cfg.alphas[a],
                                                               &clean);
                    AlphaAgg& agg_slot = res.agg[t][a];
                    agg_slot.max_recon =
                        std::max(agg_slot.max_recon, residual_reconstruction_check(rr.trace));
                    for (std::size_t pos = 0; pos < rr.clean_de.size(); ++pos) {
                        ++agg_slot.n;
                        agg_slot.sum_clean += rr.clean_de[pos];
                        agg_slot.sum_new += rr.new_de[pos];
                        agg_slot.max_decomp = std::max(
                            agg_slot.max_decomp,
                            std::abs(direct_effect_all(prep.model, rr.trace,
                                                       static_cast<int>(pos))
                                         .closure_residual()));
                        if (cfg.emit_tokens)
                            res.rows.push_back({c_str(prep.targets[t].str()),
                                                c_f(cfg.alphas[a]), c_i(seq_id),
                                                c_i(static_cast<std::int64_t>(pos)),
                                                c_f(rr.clean_de[pos]), c_f(rr.new_de[pos]),
                                                c_f(rr.new_de[pos] - rr.clean_de[pos])});
                    }
                }
            }
        });
        for (int i = 0; i < bsz; ++i) {
            const SeqResult& res = slots[static_cast<std::size_t>(i)];
            for (std::size_t t = 0; t < prep.targets.size(); ++t)
                for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
                    AlphaAgg& dst = agg[t][a];
                    const AlphaAgg& src = res.agg[t][a];
                    dst.n += src.n;
                    dst.sum_clean += src.sum_clean;
                    dst.sum_new += src.sum_new;
                    dst.max_recon = std::max(dst.max_recon, src.max_recon);
                    dst.max_decomp = std::max(dst.max_decomp, src.max_decomp);
                }
            if (token_writer)
                for (const auto& row : res.rows) token_writer->add_row(row);
        }
    }

    ResultsTable table({"head", "alpha", "n_tokens", "mean_de_clean", "mean_de_new",
                        "mean_delta_de", "slope", "classification", "max_decomp_residual",
                        "max_recon_error"});
    for (std::size_t t = 0; t < prep.targets.size(); ++t) {
        // Through-origin least squares of mean delta against alpha; alpha = 0
        // pins delta to zero exactly.
        double num = 0.0, den = 0.0;
        for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
            const AlphaAgg& slot = agg[t][a];
            if (slot.n == 0 || cfg.alphas[a] == 0.0) continue;
            const double mean_delta =
                (slot.sum_new - slot.sum_clean) / static_cast<double>(slot.n);
            num += cfg.alphas[a] * mean_delta;
            den += cfg.alphas[a] * cfg.alphas[a];
        }
        const double slope = den > 0.0 ? num / den : 0.0;
        const std::string classification =
            slope > 0.0 ? "self-reinforcing" : (slope < 0.0 ? "self-repressing" : "neutral");
        for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
            const AlphaAgg& slot = agg[t][a];
            const double n = static_cast<double>(std::max<std::int64_t>(1, slot.n));
            table.add_row({c_str(prep.targets[t].str()), c_f(cfg.alphas[a]), c_i(slot.n),
                           c_f(slot.sum_clean / n), c_f(slot.sum_new / n),
                           c_f((slot.sum_new - slot.sum_clean) / n), c_f(slope),
                           c_str(classification), c_f(slot.max_decomp), c_f(slot.max_recon)});
        }
    }
    stamp_metadata(table, cfg, prep, kind);
    if (token_writer) {
        token_writer->set_meta("schema_version", std::string(kSchemaVersion));
        token_writer->set_meta("kind", std::string("reinjection.tokens"));
        token_writer->set_meta("config", cfg.echo());
        token_writer->close();
    }
    output.primary = std::move(table);
    return output;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "head-sweep") return run_head_sweep(cfg);
    if (cfg.experiment == "ln-analysis") return run_ln_experiment(cfg);
    if (cfg.experiment == "breakdown") return run_breakdown_experiment(cfg);
    if (cfg.experiment == "neuron-analysis") return run_neuron_experiment(cfg);
    if (cfg.experiment == "reinjection") return run_reinjection_experiment(cfg);
    throw ConfigError("unknown experiment kind: " + cfg.experiment);
}

std::vector<std::filesystem::path> export_experiment(const ExperimentOutput& output,
                                                     const ExperimentConfig& cfg) {
    const ExportFormat format = export_format_from_string(cfg.format);
    std::vector<std::filesystem::path> written;
    export_results(output.primary, cfg.output_path, format);
    written.emplace_back(cfg.output_path);
    for (const auto& [suffix, table] : output.extras) {
        const std::filesystem::path p = side_path(cfg, suffix);
        export_results(table, p, format);
        written.push_back(p);
    }
    return written;
}

} // namespace selfrepair

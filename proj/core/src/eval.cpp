#include "tcmrag/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/index_bundle.hpp"
#include "tcmrag/segment.hpp"
#include "tcmrag/utf8.hpp"

namespace tcmrag {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kMetricNote =
    "artifact metric: 100 * mean(0.5 * Jaccard(pathogenesis) + 0.5 * Jaccard(syndromes))";

std::string dump(const ordered_json& j, int indent) {
    return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

// Pads by code points so Chinese labels line up in a monospace table.
std::string pad(std::string_view s, std::size_t width) {
    std::string out(s);
    const auto len = utf8::length(s);
    if (len < width) out.append(width - len, ' ');
    return out;
}

const IndexBundle& require_index(const IndexBundle* index, RagMode mode, ChunkStrategy want) {
    if (!index) throw ConfigError(fmt::format("run mode {} needs an index built with {}", to_string(mode), to_string(want)));
    if (index->strategy() != want) {
        throw ConfigError(fmt::format("run mode {} needs an index built with {}, got one built with {}",
                                      to_string(mode), to_string(want), to_string(index->strategy())));
    }
    return *index;
}

ItemResult evaluate_item(const TaskItem& item, const RunConfig& config, const EvalDeps& deps,
                         const IndexBundle* index) {
    ItemResult r;
    r.item_id = item.item_id;

    std::vector<ContextBlock> context;
    std::optional<ClinicalCase> demo;
    bool rag = false;
    if (index) {
        RetrievalDeps rd{deps.segmenter, deps.embedder, index, nullptr};
        if (config.mode == RagMode::kHybridJieba) rd.reranker = deps.reranker;
        const auto found = two_stage_retrieve(item.case_text, rd, config.effective_retrieval());
        r.warnings.insert(r.warnings.end(), found.warnings.begin(), found.warnings.end());
        r.reranker_fallback = rd.reranker != nullptr && found.used_fallback;
        for (const auto& c : found.candidates) {
            r.retrieved.push_back(c.chunk_id);
            context.push_back({c.chunk_id, index->chunk(c.chunk_id)->text});
        }
        demo = select_demonstration(found, *index);
        if (demo) r.demonstration = demo->case_id;
        rag = !found.candidates.empty();
        if (!rag) r.warnings.push_back("retrieval returned no candidates; prompt built without context");
    }

    const auto variant = select_variant(rag, config.cot);
    r.variant = std::string(to_string(variant));
    const auto bundle = build_prompt(*deps.templates, item, variant, context, demo, config.prompt_budget);
    r.warnings.insert(r.warnings.end(), bundle.notes.begin(), bundle.notes.end());

    GenerationResult gen;
    try {
        gen = generate_answer(*deps.chat, bundle, item, config.generation);
    } catch (const ProviderError& e) {
        r.failure = fmt::format("provider error: {}", e.what());
        return r;
    }
    r.repaired = gen.repaired;
    r.warnings.insert(r.warnings.end(), gen.warnings.begin(), gen.warnings.end());
    try {
        auto parsed = parse_answer(gen.raw, item);
        r.answer = std::move(parsed.answer);
        r.warnings.insert(r.warnings.end(), parsed.warnings.begin(), parsed.warnings.end());
        r.parsed = true;
        r.score = score_item(r.answer, item);
    } catch (const AnswerError& e) {
        r.failure = fmt::format("unparseable answer: {}", e.what());
    }
    return r;
}

ordered_json item_to_json(const ItemResult& r) {
    ordered_json j;
    j["item_id"] = r.item_id;
    j["score"] = r.score;
    j["parsed"] = r.parsed;
    if (!r.failure.empty()) j["failure"] = r.failure;
    if (r.parsed) j["answer"] = ordered_json::parse(serialize_answer(r.answer));
    j["variant"] = r.variant;
    j["retrieved"] = r.retrieved;
    j["demonstration"] = r.demonstration;
    j["repaired"] = r.repaired;
    j["reranker_fallback"] = r.reranker_fallback;
    j["warnings"] = r.warnings;
    return j;
}

}  // namespace

std::string_view to_string(RagMode mode) {
    switch (mode) {
        case RagMode::kNone: return "none";
        case RagMode::kNaiveRag: return "naive_rag";
        case RagMode::kHybridJieba: return "hybrid_jieba";
    }
    return "?";
}

RagMode parse_rag_mode(std::string_view name) {
    if (name == "none") return RagMode::kNone;
    if (name == "naive_rag") return RagMode::kNaiveRag;
    if (name == "hybrid_jieba") return RagMode::kHybridJieba;
    throw ConfigError(fmt::format("unknown run mode '{}' (expected none, naive_rag or hybrid_jieba)", name));
}

std::string_view row_label(RagMode mode) {
    switch (mode) {
        case RagMode::kNone: return "No RAG";
        case RagMode::kNaiveRag: return "Naive RAG";
        case RagMode::kHybridJieba: return "Naive RAG + Jieba";
    }
    return "?";
}

std::string RunConfig::name() const { return std::string(to_string(mode)) + (cot ? "+cot" : ""); }

std::string RunConfig::label() const { return std::string(row_label(mode)) + (cot ? " + CoT" : ""); }

RetrievalConfig RunConfig::effective_retrieval() const {
    RetrievalConfig r = retrieval;
    r.mode = mode == RagMode::kHybridJieba ? RetrievalMode::kHybrid : RetrievalMode::kDenseOnly;
    return r;
}

RunConfig RunConfig::parse(std::string_view name) {
    RunConfig c;
    constexpr std::string_view kCot = "+cot";
    if (name.size() > kCot.size() && name.substr(name.size() - kCot.size()) == kCot) {
        c.cot = true;
        name.remove_suffix(kCot.size());
    }
    c.mode = parse_rag_mode(name);
    return c;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double score_item(const Answer& prediction, const TaskItem& item) {
    const std::set<std::string> pp(prediction.pathogenesis.begin(), prediction.pathogenesis.end());
    const std::set<std::string> ps(prediction.syndromes.begin(), prediction.syndromes.end());
    const std::set<std::string> gp(item.gold_pathogenesis.begin(), item.gold_pathogenesis.end());
    const std::set<std::string> gs(item.gold_syndromes.begin(), item.gold_syndromes.end());
    return 0.5 * jaccard(pp, gp) + 0.5 * jaccard(ps, gs);
}

ScoreReport run_eval(std::span<const TaskItem> items, const RunConfig& config, const EvalDeps& deps) {
    if (!deps.templates || !deps.chat) throw ConfigError("evaluation needs prompt templates and a chat provider");
    if (config.parallelism < 1) throw ConfigError(fmt::format("parallelism must be >= 1 (got {})", config.parallelism));
    const IndexBundle* index = nullptr;
    if (config.mode != RagMode::kNone) {
        index = config.mode == RagMode::kNaiveRag
                    ? &require_index(deps.naive_index, config.mode, ChunkStrategy::kOverlapWindow)
                    : &require_index(deps.hybrid_index, config.mode, ChunkStrategy::kTokenChunk);
        if (!deps.segmenter || !deps.embedder) {
            throw ConfigError(fmt::format("run mode {} needs a segmenter and an embedder", to_string(config.mode)));
        }
        config.effective_retrieval().validate();
    }

    std::vector<ItemResult> results(items.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                results[i] = evaluate_item(items[i], config, deps, index);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = items.size();
            }
        }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(config.parallelism), items.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::sort(results.begin(), results.end(),
              [](const ItemResult& a, const ItemResult& b) { return a.item_id < b.item_id; });

    ScoreReport report;
    report.run = config.name();
    report.label = config.label();
    report.provider = deps.chat->name();
    report.config = config;
    double total = 0.0;
    for (const auto& r : results) {
        total += r.score;
        if (!r.parsed) {
            if (r.failure.rfind("provider error", 0) == 0) {
                ++report.provider_errors;
            } else {
                ++report.parse_failures;
            }
        }
        if (r.reranker_fallback) ++report.provider_fallbacks;
        report.warnings += r.warnings.size();
    }
    report.aggregate = results.empty() ? 0.0 : 100.0 * total / static_cast<double>(results.size());
    report.items = std::move(results);
    return report;
}

std::string ScoreReport::to_json() const {
    ordered_json j;
    j["run"] = run;
    j["label"] = label;
    j["metric"] = std::string(kMetricNote);
    j["aggregate"] = aggregate;
    j["item_count"] = items.size();
    j["parse_failures"] = parse_failures;
    j["provider_errors"] = provider_errors;
    j["provider_fallbacks"] = provider_fallbacks;
    j["warnings"] = warnings;
    ordered_json cfg;
    cfg["mode"] = std::string(to_string(config.mode));
    cfg["cot"] = config.cot;
    cfg["provider"] = provider;
    const auto r = config.effective_retrieval();
    cfg["retrieval"] = {{"mode", config.mode == RagMode::kNone ? "none" : std::string(to_string(r.mode))},
                        {"n_dense", r.n_dense},
                        {"n_sparse", r.n_sparse},
                        {"top_k", r.top_k},
                        {"alpha", r.alpha}};
    cfg["temperature"] = config.generation.temperature;
    cfg["max_tokens"] = config.generation.max_tokens;
    cfg["prompt_budget"] = config.prompt_budget;
    j["config"] = cfg;
    j["items"] = ordered_json::array();
    for (const auto& it : items) j["items"].push_back(item_to_json(it));
    return dump(j, 2) + "\n";
}

std::string ScoreReport::to_text() const {
    std::string out;
    out += fmt::format("run: {} ({})\n", run, label);
    out += fmt::format("provider: {}\n", provider);
    out += fmt::format("score: {:.2f}  [{}]\n", aggregate, kMetricNote);
    out += fmt::format("items: {}  parse failures: {}  provider errors: {}  reranker fallbacks: {}  warnings: {}\n\n",
                       items.size(), parse_failures, provider_errors, provider_fallbacks, warnings);
    std::size_t w = 4;
    for (const auto& it : items) w = std::max(w, utf8::length(it.item_id));
    out += fmt::format("{}  {:>6}  {:<6}  {:<7}  {}\n", pad("item", w), "score", "parsed", "variant", "retrieved");
    for (const auto& it : items) {
        std::string retrieved;
        for (const auto& id : it.retrieved) retrieved += (retrieved.empty() ? "" : " ") + id;
        out += fmt::format("{}  {:>6.4f}  {:<6}  {:<7}  {}\n", pad(it.item_id, w), it.score, it.parsed ? "yes" : "no",
                           it.variant, retrieved.empty() ? "-" : retrieved);
    }
    return out;
}

ScoreReport ScoreReport::from_json(std::string_view text) {
    ScoreReport r;
    try {
        const auto j = json::parse(text);
        r.run = j.at("run").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.aggregate = j.at("aggregate").get<double>();
        r.parse_failures = j.at("parse_failures").get<std::size_t>();
        r.provider_errors = j.value("provider_errors", std::size_t{0});
        r.provider_fallbacks = j.at("provider_fallbacks").get<std::size_t>();
        r.warnings = j.at("warnings").get<std::size_t>();
        const auto& cfg = j.at("config");
        r.config = RunConfig::parse(r.run);
        r.provider = cfg.value("provider", std::string());
        for (const auto& it : j.at("items")) {
            ItemResult ir;
            ir.item_id = it.at("item_id").get<std::string>();
            ir.score = it.at("score").get<double>();
            ir.parsed = it.at("parsed").get<bool>();
            ir.failure = it.value("failure", std::string());
            if (ir.parsed) {
                const auto& a = it.at("answer");
                ir.answer.clinical_features = a.at("clinical_features").get<std::vector<std::string>>();
                ir.answer.pathogenesis = a.at("pathogenesis").get<std::vector<std::string>>();
                ir.answer.syndromes = a.at("syndromes").get<std::vector<std::string>>();
                ir.answer.reasoning = a.at("reasoning").get<std::string>();
            }
            ir.variant = it.value("variant", std::string());
            ir.retrieved = it.value("retrieved", std::vector<std::string>{});
            ir.demonstration = it.value("demonstration", std::string());
            ir.repaired = it.value("repaired", false);
            ir.reranker_fallback = it.value("reranker_fallback", false);
            ir.warnings = it.value("warnings", std::vector<std::string>{});
            r.items.push_back(std::move(ir));
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("score report: {}", e.what()));
    }
    return r;
}

Comparison compare_runs(std::span<const ScoreReport> reports) {
    if (reports.size() < 2) throw Error(fmt::format("comparison needs at least two reports (got {})", reports.size()));
    auto item_ids = [](const ScoreReport& r) {
        std::set<std::string> ids;
        for (const auto& it : r.items) ids.insert(it.item_id);
        return ids;
    };
    const auto base_ids = item_ids(reports.front());
    for (const auto& r : reports.subspan(1)) {
        if (item_ids(r) != base_ids) {
            throw Error(fmt::format("reports {} and {} cover different items", reports.front().run, r.run));
        }
    }
    Comparison c;
    c.baseline = reports.front().run;
    const double base = reports.front().aggregate;
    for (const auto& r : reports) c.rows.push_back({r.run, r.label, r.aggregate, r.aggregate - base});
    std::stable_sort(c.rows.begin(), c.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.aggregate > b.aggregate; });
    return c;
}

std::string Comparison::to_json() const {
    ordered_json j;
    j["metric"] = std::string(kMetricNote);
    j["baseline"] = baseline;
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"run", r.run}, {"label", r.label}, {"aggregate", r.aggregate}, {"delta", r.delta}});
    }
    return dump(j, 2) + "\n";
}

std::string Comparison::to_text() const {
    std::size_t run_w = 3, label_w = 5;
    for (const auto& r : rows) {
        run_w = std::max(run_w, utf8::length(r.run));
        label_w = std::max(label_w, utf8::length(r.label));
    }
    std::string out = fmt::format("{}  {}  {:>7}  {:>7}\n", pad("Run", run_w), pad("Label", label_w), "Score", "Delta");
    for (const auto& r : rows) {
        // |delta| < 0.005 prints as +0.00.
        const double d = std::abs(r.delta) < 0.005 ? 0.0 : r.delta;
        out += fmt::format("{}  {}  {:>7.2f}  {:>+7.2f}\n", pad(r.run, run_w), pad(r.label, label_w), r.aggregate, d);
    }
    out += fmt::format("(delta against {}; {})\n", baseline, kMetricNote);
    return out;
}

}  // namespace tcmrag

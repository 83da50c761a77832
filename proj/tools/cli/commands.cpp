#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <tcmrag/error.hpp>
#include <tcmrag/eval.hpp>
#include <tcmrag/index_bundle.hpp>
#include <tcmrag/llm.hpp>
#include <tcmrag/providers.hpp>
#include <tcmrag/retrieve.hpp>
#include <tcmrag/segment.hpp>
#include <tcmrag/task.hpp>
#include <tcmrag/transport.hpp>

#include "app_config.hpp"

namespace tcmrag::cli {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::string config;
    bool stub = false;
    bool verbose = false;
};

std::shared_ptr<spdlog::logger> logger() {
    auto log = spdlog::get("tcmrag");
    if (!log) {
        log = spdlog::stderr_color_mt("tcmrag");
        log->set_pattern("[%l] %v");
    }
    return log;
}

AppConfig load_config(const GlobalOptions& g) {
    auto cfg = AppConfig::defaults();
    if (!g.config.empty()) {
        const fs::path path = g.config;
        cfg.apply(KeyValueFile::load(path), path.has_parent_path() ? path.parent_path() : fs::path{"."});
    }
    cfg.validate();
    return cfg;
}

std::shared_ptr<const Segmenter> make_segmenter(const AppConfig& cfg) {
    auto lex = Lexicon::load(cfg.lexicon);
    std::optional<HmmModel> hmm;
    if (!cfg.hmm.empty()) hmm = HmmModel::load(cfg.hmm);
    return std::make_shared<const Segmenter>(std::move(lex), std::move(hmm));
}

std::unique_ptr<EmbeddingProvider> make_embedder(const GlobalOptions& g, const AppConfig& cfg,
                                                 std::shared_ptr<const Segmenter> seg) {
    if (g.stub) return std::make_unique<StubEmbeddingProvider>(std::move(seg), cfg.stub_dim);
    if (!cfg.embed.configured()) throw ConfigError("no embedding provider: pass --stub or set embed.url");
    return std::make_unique<HttpEmbeddingProvider>(cfg.embed.endpoint("EMBED_API_KEY"));
}

std::unique_ptr<Reranker> make_reranker(const GlobalOptions& g, const AppConfig& cfg) {
    if (g.stub || !cfg.rerank.configured()) return nullptr;
    return std::make_unique<HttpReranker>(cfg.rerank.endpoint("RERANK_API_KEY"));
}

std::unique_ptr<ChatProvider> make_chat(const GlobalOptions& g, const AppConfig& cfg, const std::string& mock_flag) {
    const fs::path mock = mock_flag.empty() ? cfg.chat_mock : fs::path(mock_flag);
    if (!mock.empty()) {
        if (!fs::is_regular_file(mock)) throw ConfigError(fmt::format("mock chat file {} does not exist", mock.string()));
        return std::make_unique<MockChatProvider>(MockChatProvider::load(mock));
    }
    if (g.stub) throw ConfigError("--stub needs a mock chat file (--mock or chat.mock)");
    if (!cfg.chat.configured()) throw ConfigError("no chat provider: pass --mock, set chat.mock or set chat.url");
    return std::make_unique<HttpChatProvider>(cfg.chat.endpoint("CHAT_API_KEY"));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw Error(fmt::format("cannot read {}", path.string()));
    return buf.str();
}

void write_file(const fs::path& path, std::string_view data) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write {}", path.string()));
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error(fmt::format("write failed: {}", path.string()));
    }
    fs::rename(tmp, path);
}

std::string trim_spaces(std::string s) {
    const auto b = s.find_first_not_of(' ');
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(' ') - b + 1);
}

/// Advisory lock on an output directory, held for the command's lifetime.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) {
            throw Error(fmt::format("{} exists: another command is writing {} (remove the file if it is stale)",
                                    path_.string(), dir.string()));
        }
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
    std::string raw_dir;
    std::string out;
    bool clean = false;
    std::string mock;
};

int cmd_ingest(const GlobalOptions& g, const IngestArgs& a, std::ostream& out, std::ostream& err) {
    const auto cfg = load_config(g);
    if (!fs::is_directory(a.raw_dir)) throw ConfigError(fmt::format("raw directory {} does not exist", a.raw_dir));
    std::unique_ptr<ChatProvider> chat;
    if (a.clean) chat = make_chat(g, cfg, a.mock);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.raw_dir)) {
        const auto name = entry.path().filename().string();
        if (name.empty() || name.front() == '.') continue;
        if (entry.is_regular_file() || entry.is_symlink()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<ClinicalCase> cases;
    std::vector<std::string> failures;
    for (const auto& file : files) {
        const auto name = file.filename().string();
        std::string text;
        try {
            text = read_file(file);
        } catch (const Error& e) {
            failures.push_back(fmt::format("{}: {}", name, e.what()));
            continue;
        }
        const auto normalized = trim_spaces(normalize_text(text));
        if (normalized.empty()) {
            failures.push_back(fmt::format("{}: no text after normalization", name));
            continue;
        }
        if (!a.clean) {
            ClinicalCase c;
            c.case_id = file.stem().string();
            c.clinical_info = normalized;
            c.source = name;
            c.raw_text = text;
            cases.push_back(std::move(c));
            continue;
        }
        try {
            const auto pieces = split_cases(*chat, normalized, cfg.generation);
            std::vector<ClinicalCase> extracted;
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                auto c = extract_fields(*chat, pieces[i], cfg.generation);
                c.case_id = fmt::format("{}-{}", file.stem().string(), i + 1);
                c.source = name;
                c.raw_text = pieces[i];
                validate_case(c);
                extracted.push_back(std::move(c));
            }
            cases.insert(cases.end(), extracted.begin(), extracted.end());
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            failures.push_back(fmt::format("{}: {}", name, e.what()));
        }
    }

    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (!ids.insert(c.case_id).second) throw Error(fmt::format("duplicate case id {} in ingest output", c.case_id));
    }
    std::ostringstream buf;
    write_corpus(buf, cases);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_file(a.out, buf.str());

    out << fmt::format("ingest: {} files, {} cases written to {}, {} guard failures\n", files.size(), cases.size(),
                       a.out, failures.size());
    for (const auto& f : failures) err << "guard failure: " << f << '\n';
    return failures.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// index

struct IndexArgs {
    std::string strategy;
    std::string corpus;
    std::string out_dir;
};

int cmd_index(const GlobalOptions& g, const IndexArgs& a, std::ostream& out, std::ostream&) {
    const auto cfg = load_config(g);
    const auto strategy = parse_strategy(a.strategy);
    if (!fs::is_regular_file(a.corpus)) throw ConfigError(fmt::format("corpus file {} does not exist", a.corpus));
    const auto corpus = load_corpus(a.corpus);
    const auto seg = make_segmenter(cfg);
    auto embedder = make_embedder(g, cfg, seg);

    const fs::path dir = a.out_dir;
    DirLock lock(dir);
    std::vector<fs::path> written;
    try {
        logger()->debug("chunking {} cases with {}", corpus.size(), to_string(strategy));
        const auto bundle = build_index(corpus, strategy, cfg.chunking, *seg, *embedder);
        written = bundle.save(dir);
        out << fmt::format("index: {} cases, {} chunks, strategy {}, embedder {}, dim {}\n", corpus.size(),
                           bundle.chunks().size(), to_string(strategy), bundle.embedder(), bundle.dense().dim());
    } catch (...) {
        for (auto name : {IndexBundle::kVectorFile, IndexBundle::kKeywordFile, IndexBundle::kChunkFile,
                          IndexBundle::kCaseFile, IndexBundle::kManifestFile}) {
            std::error_code ec;
            fs::remove(dir / name, ec);
        }
        throw;
    }
    for (const auto& p : written) out << fmt::format("{}  {}\n", sha256_hex(read_file(p)), p.filename().string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// query

struct QueryArgs {
    std::string question;
    std::string index;
    std::string strategy;
    std::size_t k = 0;
    std::string mode = "hybrid";
    bool answer = false;
    bool cot = false;
    std::vector<std::string> pathogenesis_options;
    std::vector<std::string> syndrome_options;
    std::string mock;
};

IndexBundle load_index(const fs::path& dir, std::optional<ChunkStrategy> expected, std::string_view what) {
    if (!fs::is_directory(dir)) throw ConfigError(fmt::format("{} directory {} does not exist", what, dir.string()));
    const auto actual = IndexBundle::read_strategy(dir);
    if (expected && *expected != actual) {
        throw ConfigError(fmt::format("{} {} was built with strategy {}, but {} was requested", what, dir.string(),
                                      to_string(actual), to_string(*expected)));
    }
    return IndexBundle::load(dir);
}

void check_embedder(const IndexBundle& index, const EmbeddingProvider& embedder, const fs::path& dir) {
    if (index.embedder() != embedder.name()) {
        throw ConfigError(fmt::format("index {} was embedded with {}, but the current embedder is {}", dir.string(),
                                      index.embedder(), embedder.name()));
    }
}

int cmd_query(const GlobalOptions& g, const QueryArgs& a, std::ostream& out, std::ostream& err) {
    auto cfg = load_config(g);
    std::optional<ChunkStrategy> expected;
    if (!a.strategy.empty()) expected = parse_strategy(a.strategy);
    RetrievalConfig rc = cfg.retrieval;
    rc.mode = parse_retrieval_mode(a.mode);
    if (a.k > 0) rc.top_k = a.k;
    rc.validate();
    if (a.answer && (a.pathogenesis_options.empty() || a.syndrome_options.empty())) {
        throw ConfigError("--answer needs at least one --pathogenesis-option and one --syndrome-option");
    }

    const auto seg = make_segmenter(cfg);
    auto embedder = make_embedder(g, cfg, seg);
    auto reranker = make_reranker(g, cfg);
    const auto index = load_index(a.index, expected, "index");
    check_embedder(index, *embedder, a.index);
    std::unique_ptr<ChatProvider> chat;
    std::optional<PromptTemplates> templates;
    if (a.answer) {
        chat = make_chat(g, cfg, a.mock);
        templates = PromptTemplates::load(cfg.templates);
    }

    const RetrievalDeps deps{seg.get(), embedder.get(), &index, reranker.get()};
    const auto result = two_stage_retrieve(a.question, deps, rc);
    for (const auto& w : result.warnings) err << "warning: " << w << '\n';

    out << fmt::format("{:<4}  {:<16}  {:>8}  {:>8}  {:>8}\n", "rank", "chunk", "dense", "sparse", "rerank");
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        const auto& c = result.candidates[i];
        out << fmt::format("{:<4}  {:<16}  {:>8.6f}  {:>8.6f}  {:>8.6f}\n", i + 1, c.chunk_id, c.dense_score,
                           c.sparse_score, c.rerank_score);
    }
    if (result.candidates.empty()) out << "(no matching chunks)\n";
    if (!a.answer) return kExitOk;

    TaskItem item;
    item.item_id = "query";
    item.case_text = a.question;
    item.pathogenesis_options = a.pathogenesis_options;
    item.syndrome_options = a.syndrome_options;
    std::vector<ContextBlock> context;
    for (const auto& c : result.candidates) context.push_back({c.chunk_id, index.chunk(c.chunk_id)->text});
    const auto demo = select_demonstration(result, index);
    const auto variant = select_variant(!context.empty(), a.cot);
    const auto bundle = build_prompt(*templates, item, variant, context, demo, cfg.prompt_budget);
    for (const auto& n : bundle.notes) err << "note: " << n << '\n';
    const auto gen = generate_answer(*chat, bundle, item, cfg.generation);
    for (const auto& w : gen.warnings) err << "warning: " << w << '\n';
    const auto parsed = parse_answer(gen.raw, item);
    for (const auto& w : parsed.warnings) err << "warning: " << w << '\n';
    out << serialize_answer(parsed.answer) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string tasks;
    std::string runs = "none,naive_rag,hybrid_jieba";
    std::string naive_index;
    std::string hybrid_index;
    std::string out_dir;
    std::string mock;
};

std::vector<RunConfig> parse_runs(std::string_view spec) {
    std::vector<RunConfig> runs;
    std::set<std::string> seen;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const auto comma = spec.find(',', pos);
        auto name = spec.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        while (!name.empty() && name.front() == ' ') name.remove_prefix(1);
        while (!name.empty() && name.back() == ' ') name.remove_suffix(1);
        if (name.empty()) throw ConfigError(fmt::format("empty run name in '{}'", spec));
        auto run = RunConfig::parse(name);
        if (!seen.insert(run.name()).second) throw ConfigError(fmt::format("run {} listed twice", run.name()));
        runs.push_back(run);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return runs;
}

int cmd_eval(const GlobalOptions& g, const EvalArgs& a, std::ostream& out, std::ostream&) {
    const auto cfg = load_config(g);
    auto runs = parse_runs(a.runs);
    if (!fs::is_regular_file(a.tasks)) throw ConfigError(fmt::format("task file {} does not exist", a.tasks));
    const auto items = load_tasks(a.tasks);
    const auto templates = PromptTemplates::load(cfg.templates);

    const bool need_naive = std::any_of(runs.begin(), runs.end(), [](auto& r) { return r.mode == RagMode::kNaiveRag; });
    const bool need_hybrid =
        std::any_of(runs.begin(), runs.end(), [](auto& r) { return r.mode == RagMode::kHybridJieba; });
    std::optional<IndexBundle> naive, hybrid;
    if (need_naive) {
        if (a.naive_index.empty()) throw ConfigError("run naive_rag needs --naive-index");
        naive = load_index(a.naive_index, ChunkStrategy::kOverlapWindow, "naive index");
    }
    if (need_hybrid) {
        if (a.hybrid_index.empty()) throw ConfigError("run hybrid_jieba needs --hybrid-index");
        hybrid = load_index(a.hybrid_index, ChunkStrategy::kTokenChunk, "hybrid index");
    }
    const auto seg = make_segmenter(cfg);
    std::unique_ptr<EmbeddingProvider> embedder;
    std::unique_ptr<Reranker> reranker;
    if (need_naive || need_hybrid) {
        embedder = make_embedder(g, cfg, seg);
        if (naive) check_embedder(*naive, *embedder, a.naive_index);
        if (hybrid) check_embedder(*hybrid, *embedder, a.hybrid_index);
        reranker = make_reranker(g, cfg);
    }
    auto chat = make_chat(g, cfg, a.mock);

    EvalDeps deps;
    deps.templates = &templates;
    deps.chat = chat.get();
    deps.segmenter = seg.get();
    deps.embedder = embedder.get();
    deps.reranker = reranker.get();
    deps.naive_index = naive ? &*naive : nullptr;
    deps.hybrid_index = hybrid ? &*hybrid : nullptr;

    const fs::path dir = a.out_dir;
    DirLock lock(dir);
    std::vector<ScoreReport> reports;
    for (auto& run : runs) {
        run.retrieval = cfg.retrieval;
        run.generation = cfg.generation;
        run.prompt_budget = cfg.prompt_budget;
        run.parallelism = cfg.parallelism;
        logger()->debug("running {} over {} items", run.name(), items.size());
        auto report = run_eval(items, run, deps);
        write_file(dir / (run.name() + ".json"), report.to_json());
        write_file(dir / (run.name() + ".txt"), report.to_text());
        out << fmt::format("{:<20} {:>7.2f}  ({} items, {} parse failures, {} provider errors)\n", run.name(),
                           report.aggregate, report.items.size(), report.parse_failures, report.provider_errors);
        reports.push_back(std::move(report));
    }
    if (reports.size() >= 2) {
        const auto cmp = compare_runs(reports);
        write_file(dir / "comparison.json", cmp.to_json());
        write_file(dir / "comparison.txt", cmp.to_text());
        out << '\n' << cmp.to_text();
    }
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"tcmrag: retrieval-augmented reasoning over TCM clinical cases", "tcmrag"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config, "Flat key = value config file");
    app.add_flag("--stub", g.stub, "Offline providers: stub embeddings, fusion reranking, mock chat only");
    app.add_flag("--verbose", g.verbose, "Log progress to stderr");

    IngestArgs ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Normalize (and optionally LLM-clean) raw case files into a corpus");
    ingest_cmd->add_option("raw_dir", ingest.raw_dir, "Directory of raw UTF-8 text files")->required();
    ingest_cmd->add_option("out", ingest.out, "Corpus file to write (JSON lines)")->required();
    ingest_cmd->add_flag("--clean,!--no-clean", ingest.clean,
                         "Split and extract fields with the chat provider (default --no-clean: one case per file)");
    ingest_cmd->add_option("--mock", ingest.mock, "Mock chat provider file");

    IndexArgs index;
    auto* index_cmd = app.add_subcommand("index", "Chunk, segment, embed and persist the dense and keyword indexes");
    index_cmd->add_option("--strategy", index.strategy, "overlap_window or token_chunk")->required();
    index_cmd->add_option("corpus", index.corpus, "Corpus file")->required();
    index_cmd->add_option("out_dir", index.out_dir, "Index directory")->required();

    QueryArgs query;
    auto* query_cmd = app.add_subcommand("query", "Retrieve chunks for a question and optionally answer it");
    query_cmd->add_option("question", query.question, "Query text")->required();
    query_cmd->add_option("--index", query.index, "Index directory")->required();
    query_cmd->add_option("--strategy", query.strategy, "Expected chunking strategy of the index");
    query_cmd->add_option("--k", query.k, "Number of chunks to return (default retrieval.top_k)");
    query_cmd->add_option("--mode", query.mode, "dense_only, sparse_only or hybrid")->capture_default_str();
    query_cmd->add_flag("--answer", query.answer, "Generate and print a JSON answer");
    query_cmd->add_flag("--cot", query.cot, "Use the chain-of-thought template with --answer");
    query_cmd->add_option("--pathogenesis-option", query.pathogenesis_options, "Pathogenesis option (repeatable)");
    query_cmd->add_option("--syndrome-option", query.syndrome_options, "Syndrome option (repeatable)");
    query_cmd->add_option("--mock", query.mock, "Mock chat provider file");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Run ablation configurations over a task file and compare them");
    eval_cmd->add_option("tasks", eval.tasks, "Task file (JSON lines)")->required();
    eval_cmd->add_option("--runs", eval.runs, "Comma-separated runs: none, naive_rag, hybrid_jieba, each optionally +cot")
        ->capture_default_str();
    eval_cmd->add_option("--naive-index", eval.naive_index, "overlap_window index for naive_rag");
    eval_cmd->add_option("--hybrid-index", eval.hybrid_index, "token_chunk index for hybrid_jieba");
    eval_cmd->add_option("--out", eval.out_dir, "Report directory")->required();
    eval_cmd->add_option("--mock", eval.mock, "Mock chat provider file");

    for (auto* sub : {ingest_cmd, index_cmd, query_cmd, eval_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitConfig;
    }

    auto log = logger();
    log->set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);
    try {
        if (*ingest_cmd) return cmd_ingest(g, ingest, out, err);
        if (*index_cmd) return cmd_index(g, index, out, err);
        if (*query_cmd) return cmd_query(g, query, out, err);
        if (*eval_cmd) return cmd_eval(g, eval, out, err);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace tcmrag::cli

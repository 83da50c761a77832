// Builds the planted retrieval corpus and the mock chat files shipped in data/.
//
//   tcmrag_fixtures planted --lexicon L --hmm H --out-dir D [--seed N] [--dim N]
//   tcmrag_fixtures mocks --tasks T --out-dir D

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <tcmrag/dense.hpp>
#include <tcmrag/error.hpp>
#include <tcmrag/index_bundle.hpp>
#include <tcmrag/llm.hpp>
#include <tcmrag/prompt.hpp>
#include <tcmrag/retrieve.hpp>
#include <tcmrag/segment.hpp>
#include <tcmrag/task.hpp>
#include <tcmrag/utf8.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace tcmrag;

namespace {

constexpr std::size_t kCases = 200;
constexpr std::size_t kRareQueries = 50;
constexpr std::size_t kParaQueries = 50;
constexpr std::size_t kWordsPerCase = 8;
constexpr std::size_t kCommonWords = 6;
constexpr std::size_t kParaShared = 4;  // query words colliding with the target's buckets
constexpr std::size_t kParaFree = 2;    // query words outside them
constexpr std::size_t kRecallK = 5;
constexpr std::string_view kSep = "，";

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += kSep;
        out += w;
    }
    return out;
}

struct Planter {
    const Segmenter& seg;
    std::size_t dim;
    Rng rng;

    std::vector<std::string> vocab;  // eligible words, sorted
    std::vector<std::string> rare;
    std::vector<std::string> common;
    std::vector<std::string> general;
    std::map<std::size_t, std::vector<std::string>> by_bucket;
    std::size_t label_bucket = 0;

    std::size_t bucket(const std::string& w) const { return fnv1a64(w) % dim; }

    void build_vocab() {
        std::vector<std::string> words;
        for (const auto& [key, freq] : seg.lexicon().entries()) {
            if (freq == 0 || key.size() < 2 || key.size() > 4) continue;
            if (!std::all_of(key.begin(), key.end(), utf8::is_han)) continue;
            words.push_back(utf8::encode(key));
        }
        std::sort(words.begin(), words.end());
        for (auto& w : words) {
            // Must stay one token between separators.
            const auto toks = seg.cut(std::string(kSep) + w + std::string(kSep)).tokens;
            if (toks.size() == 3 && toks[1].text == w && w != "临床信息") vocab.push_back(w);
        }
        ClinicalCase probe;
        probe.case_id = "probe";
        probe.clinical_info = vocab.front();
        for (const auto& t : seg.tokens(case_document(probe))) {
            if (t != vocab.front()) label_bucket = bucket(t);
        }
        std::vector<std::string> pool = vocab;
        std::shuffle(pool.begin(), pool.end(), rng);
        std::size_t i = 0;
        while (rare.size() < kRareQueries) {
            const auto& w = pool[i++];
            if (bucket(w) != label_bucket) rare.push_back(w);
        }
        while (common.size() < kCommonWords) {
            const auto& w = pool[i++];
            if (bucket(w) != label_bucket) common.push_back(w);
        }
        general.assign(pool.begin() + static_cast<std::ptrdiff_t>(i), pool.end());
        for (const auto& w : vocab) {
            if (std::find(rare.begin(), rare.end(), w) == rare.end()) by_bucket[bucket(w)].push_back(w);
        }
    }

    std::vector<std::string> random_case(const std::vector<std::string>& seed_words) {
        std::vector<std::string> words = seed_words;
        std::set<std::size_t> used;
        for (const auto& w : words) used.insert(bucket(w));
        while (words.size() < kWordsPerCase) {
            const auto& w = general[pick(rng, general.size())];
            const auto b = bucket(w);
            if (b == label_bucket || used.contains(b)) continue;
            used.insert(b);
            words.push_back(w);
        }
        std::shuffle(words.begin(), words.end(), rng);
        return words;
    }
};

struct PlantedCase {
    std::string id;
    std::vector<std::string> words;
    std::set<std::size_t> buckets;
};

struct Query {
    std::string id;
    std::string kind;
    std::vector<std::string> words;
    std::size_t target = 0;
};

std::set<std::size_t> buckets_of(const Planter& p, const std::set<std::string>& tokens) {
    std::set<std::size_t> out;
    for (const auto& t : tokens) out.insert(p.bucket(t));
    return out;
}

double share(const std::set<std::size_t>& q, const std::set<std::size_t>& d) {
    std::size_t n = 0;
    for (auto b : q) n += d.count(b);
    return static_cast<double>(n) / static_cast<double>(q.size());
}

std::optional<std::vector<std::string>> paraphrase(Planter& p, const std::vector<PlantedCase>& cases,
                                                   std::size_t target) {
    const auto& t = cases[target];
    std::vector<std::size_t> content;
    for (auto b : t.buckets) {
        if (b == p.label_bucket) continue;
        const auto it = p.by_bucket.find(b);
        if (it == p.by_bucket.end()) continue;
        if (std::any_of(it->second.begin(), it->second.end(), [&](const std::string& w) {
                return std::find(t.words.begin(), t.words.end(), w) == t.words.end();
            })) {
            content.push_back(b);
        }
    }
    if (content.size() < kParaShared) return std::nullopt;
    for (int attempt = 0; attempt < 4000; ++attempt) {
        std::shuffle(content.begin(), content.end(), p.rng);
        std::set<std::size_t> qb(content.begin(), content.begin() + kParaShared);
        std::vector<std::string> words;
        for (auto b : qb) {
            std::vector<std::string> options;
            for (const auto& w : p.by_bucket.at(b)) {
                if (std::find(t.words.begin(), t.words.end(), w) == t.words.end()) options.push_back(w);
            }
            words.push_back(options[pick(p.rng, options.size())]);
        }
        while (words.size() < kParaShared + kParaFree) {
            const auto& w = p.general[pick(p.rng, p.general.size())];
            const auto b = p.bucket(w);
            if (b == p.label_bucket || t.buckets.contains(b) || qb.contains(b)) continue;
            qb.insert(b);
            words.push_back(w);
        }
        bool ok = true;
        for (std::size_t d = 0; d < cases.size() && ok; ++d) {
            if (d != target && share(qb, cases[d].buckets) >= 0.2) ok = false;
        }
        if (ok && share(qb, t.buckets) >= 0.6) {
            std::shuffle(words.begin(), words.end(), p.rng);
            return words;
        }
    }
    return std::nullopt;
}

ClinicalCase to_case(const PlantedCase& c) {
    ClinicalCase out;
    out.case_id = c.id;
    out.clinical_info = join(c.words) + "。";
    out.source = "planted";
    return out;
}

int cmd_planted(const fs::path& lexicon, const fs::path& hmm, const fs::path& out_dir, std::uint64_t seed,
                std::size_t dim) {
    const Segmenter seg(Lexicon::load(lexicon), HmmModel::load(hmm));
    Planter p{seg, dim, Rng(seed), {}, {}, {}, {}, {}, 0};
    p.build_vocab();

    std::vector<std::size_t> roles(kCases);
    for (std::size_t i = 0; i < kCases; ++i) roles[i] = i;
    std::shuffle(roles.begin(), roles.end(), p.rng);
    const std::vector<std::size_t> rare_targets(roles.begin(), roles.begin() + kRareQueries);
    const std::vector<std::size_t> para_targets(roles.begin() + kRareQueries,
                                                roles.begin() + kRareQueries + kParaQueries);
    std::map<std::size_t, std::size_t> rare_of;
    for (std::size_t i = 0; i < rare_targets.size(); ++i) rare_of[rare_targets[i]] = i;

    std::vector<PlantedCase> cases(kCases);
    std::vector<std::string> rare_common(kRareQueries);
    auto make_case = [&](std::size_t i) {
        std::vector<std::string> seed_words;
        if (auto it = rare_of.find(i); it != rare_of.end()) {
            rare_common[it->second] = p.common[pick(p.rng, p.common.size())];
            seed_words = {p.rare[it->second], rare_common[it->second]};
        } else if (pick(p.rng, 2) == 0) {
            seed_words = {p.common[pick(p.rng, p.common.size())]};
        }
        cases[i].id = fmt::format("p{:03}", i + 1);
        cases[i].words = p.random_case(seed_words);
        cases[i].buckets = buckets_of(p, seg.tokens(case_document(to_case(cases[i]))));
    };
    for (std::size_t i = 0; i < kCases; ++i) make_case(i);

    std::map<std::size_t, std::vector<std::string>> para_words;
    for (int round = 0;; ++round) {
        if (round > 50) throw Error("could not place the paraphrase queries; try another seed");
        para_words.clear();
        std::optional<std::size_t> failed;
        for (auto t : para_targets) {
            auto words = paraphrase(p, cases, t);
            if (!words) {
                failed = t;
                break;
            }
            para_words[t] = *words;
        }
        if (!failed) break;
        make_case(*failed);
    }

    std::vector<Query> queries;
    for (std::size_t i = 0; i < kRareQueries; ++i) {
        queries.push_back({fmt::format("q{:03}", queries.size() + 1), "rare_keyword",
                           {p.rare[i], rare_common[i]}, rare_targets[i]});
    }
    for (auto t : para_targets) {
        queries.push_back({fmt::format("q{:03}", queries.size() + 1), "paraphrase", para_words[t], t});
    }

    // Verify against the library before writing anything.
    std::vector<ClinicalCase> corpus;
    for (const auto& c : cases) corpus.push_back(to_case(c));
    auto seg_ptr = std::make_shared<const Segmenter>(seg);
    StubEmbeddingProvider stub(seg_ptr, dim);
    const auto bundle = build_index(corpus, ChunkStrategy::kTokenChunk, ChunkingParams{}, seg, stub);
    if (bundle.chunks().size() != kCases) throw Error(fmt::format("expected {} chunks, got {}", kCases, bundle.chunks().size()));
    RetrievalDeps deps{&seg, &stub, &bundle, nullptr};
    ordered_json qlines = ordered_json::array();
    for (const auto& q : queries) {
        const auto text = join(q.words);
        const auto toks = seg.tokens(text);
        if (toks != std::set<std::string>(q.words.begin(), q.words.end())) {
            throw Error(fmt::format("query {} does not segment into its words", q.id));
        }
        RetrievalConfig rc;
        rc.top_k = kRecallK;
        rc.mode = q.kind == "rare_keyword" ? RetrievalMode::kSparseOnly : RetrievalMode::kDenseOnly;
        const auto hits = two_stage_retrieve(text, deps, rc);
        const auto target_chunk = cases[q.target].id + "#0";
        if (std::none_of(hits.candidates.begin(), hits.candidates.end(),
                         [&](const RetrievalCandidate& c) { return c.chunk_id == target_chunk; })) {
            throw Error(fmt::format("query {} misses its target {} in {}", q.id, target_chunk, to_string(rc.mode)));
        }
        const auto qb = buckets_of(p, toks);
        double max_decoy = 0.0;
        for (std::size_t d = 0; d < cases.size(); ++d) {
            if (d != q.target) max_decoy = std::max(max_decoy, share(qb, cases[d].buckets));
        }
        ordered_json j;
        j["query_id"] = q.id;
        j["kind"] = q.kind;
        j["text"] = text;
        j["target_case"] = cases[q.target].id;
        j["target_chunk"] = target_chunk;
        j["target_bucket_share"] = share(qb, cases[q.target].buckets);
        j["max_decoy_bucket_share"] = max_decoy;
        qlines.push_back(j);
    }

    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "corpus.jsonl", std::ios::binary | std::ios::trunc);
        write_corpus(out, corpus);
    }
    {
        std::ofstream out(out_dir / "queries.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& j : qlines) out << j.dump(-1, ' ', false) << '\n';
    }
    std::cout << fmt::format("planted: {} cases, {} queries, dim {}, seed {}\n", corpus.size(), queries.size(), dim, seed);
    return 0;
}

std::string answer_json(const TaskItem& item) {
    Answer a;
    std::string_view rest = item.case_text;
    for (int i = 0; i < 3 && !rest.empty(); ++i) {
        const auto cut = rest.find(kSep);
        a.clinical_features.emplace_back(rest.substr(0, cut));
        rest = cut == std::string_view::npos ? std::string_view{} : rest.substr(cut + kSep.size());
    }
    a.pathogenesis = item.gold_pathogenesis;
    a.syndromes = item.gold_syndromes;
    a.reasoning = "依据临床特征归纳病机与证候。";
    return serialize_answer(a);
}

std::string gold_case_of(const TaskItem& item) {
    if (item.item_id.size() < 2 || item.item_id.front() != 't') {
        throw Error(fmt::format("item {} does not follow the tNN naming", item.item_id));
    }
    return "c" + item.item_id.substr(1);
}

int cmd_mocks(const fs::path& tasks_path, const fs::path& out_dir) {
    const auto items = load_tasks(tasks_path);
    const std::string empty = serialize_answer(Answer{{}, {}, {}, ""});
    MockChatProvider echo, none, sensitive;
    none.set_default(empty);
    sensitive.set_default(empty);
    for (const auto& item : items) {
        echo.add_rule({{item.case_text}, answer_json(item)});
        sensitive.add_rule({{item.case_text, fmt::format("| {}#", gold_case_of(item))}, answer_json(item)});
    }
    fs::create_directories(out_dir);
    for (const auto& [name, mock] : {std::pair<const char*, MockChatProvider*>{"echo_gold.json", &echo},
                                     {"empty.json", &none},
                                     {"retrieval_sensitive.json", &sensitive}}) {
        std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
        out << mock->to_json();
    }
    std::cout << fmt::format("mocks: {} items\n", items.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generates the planted retrieval fixture and mock chat files", "tcmrag_fixtures"};
    app.require_subcommand(1);

    fs::path lexicon, hmm, out_dir, tasks;
    std::uint64_t seed = 17;
    std::size_t dim = StubEmbeddingProvider::kDefaultDim;
    auto* planted = app.add_subcommand("planted", "Planted-document corpus and queries");
    planted->add_option("--lexicon", lexicon)->required();
    planted->add_option("--hmm", hmm)->required();
    planted->add_option("--out-dir", out_dir)->required();
    planted->add_option("--seed", seed)->capture_default_str();
    planted->add_option("--dim", dim)->capture_default_str();

    auto* mocks = app.add_subcommand("mocks", "Echo-gold, empty and retrieval-sensitive mock chat files");
    mocks->add_option("--tasks", tasks)->required();
    mocks->add_option("--out-dir", out_dir)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*planted) return cmd_planted(lexicon, hmm, out_dir, seed, dim);
        return cmd_mocks(tasks, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vqapipe/exemplar.hpp"
#include "vqapipe/gateway.hpp"
#include "vqapipe/rng.hpp"

using namespace vqapipe;

namespace {

EmbeddingVector unit(std::vector<double> v) {
    EmbeddingVector e{std::move(v)};
    e.normalize();
    return e;
}

EmbeddingVector random_unit(CounterRng& rng, std::size_t dim) {
    EmbeddingVector e;
    e.values.resize(dim);
    for (double& x : e.values) x = 2.0 * rng.next_unit() - 1.0;
    e.normalize();
    return e;
}

ExemplarIndex random_index(std::size_t count, std::size_t dim, std::uint64_t seed,
                           SelectionMode mode) {
    CounterRng rng(seed);
    ExemplarIndex index;
    index.dim = dim;
    index.selection_mode = mode;
    for (std::size_t i = 0; i < count; ++i) {
        Exemplar e;
        char buf[16];
        std::snprintf(buf, sizeof buf, "q%06zu", i);
        e.question_id = buf;
        e.image_id = "img" + std::to_string(i);
        e.question = "question " + std::to_string(i);
        e.answer = "answer";
        e.greedy_caption = "caption " + std::to_string(i);
        e.q_emb = random_unit(rng, dim);
        e.i_emb = random_unit(rng, dim);
        index.entries.push_back(std::move(e));
    }
    return index;
}

// Independent full-sort oracle over all entries.
std::vector<std::string> brute_force_ranking(const ExemplarIndex& index,
                                             const EmbeddingVector& q_emb,
                                             const EmbeddingVector& i_emb, std::size_t n) {
    struct Row {
        double score;
        std::string qid;
    };
    std::vector<Row> rows;
    for (const Exemplar& e : index.entries) {
        double sq = 0.0, si = 0.0;
        for (std::size_t d = 0; d < q_emb.dim(); ++d) {
            sq += q_emb.values[d] * e.q_emb.values[d];
            si += i_emb.values[d] * e.i_emb.values[d];
        }
        double score =
            index.selection_mode == SelectionMode::image_question ? (sq + si) / 2.0 : sq;
        rows.push_back({score, e.question_id});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.qid < b.qid;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rows[i].qid);
    return out;
}

}  // namespace

TEST_CASE("cosine spot values") {
    CHECK(cosine(unit({1, 0}), unit({0, 1})) == Catch::Approx(0.0).margin(1e-12));
    CHECK(cosine(unit({0.3, 0.4}), unit({0.3, 0.4})) == Catch::Approx(1.0).margin(1e-12));
    CHECK(cosine(unit({1, 0}), unit({1, 1})) == Catch::Approx(0.7071067811865475).margin(1e-12));
    CHECK_THROWS_AS(cosine(unit({1, 0}), unit({1, 0, 0})), ConfigurationError);
}

TEST_CASE("combined_similarity averages or passes through by mode") {
    CHECK(combined_similarity(1.0, 0.0, SelectionMode::image_question) == 0.5);
    CHECK(combined_similarity(0.6, 0.6, SelectionMode::image_question) == 0.6);
    CHECK(combined_similarity(0.8, 0.1, SelectionMode::question_only) == 0.8);
}

TEST_CASE("select_shots prefers balanced similarity in image+question mode") {
    ExemplarIndex index;
    index.dim = 2;
    index.selection_mode = SelectionMode::image_question;
    EmbeddingVector qx = unit({1, 0});

    // A: sim_q 1.0, sim_i 0.0; B: sim_q 0.6, sim_i 0.6.
    Exemplar a;
    a.question_id = "A";
    a.question = "qa";
    a.answer = "x";
    a.greedy_caption = "c";
    a.q_emb = unit({1, 0});
    a.i_emb = unit({0, 1});
    Exemplar b = a;
    b.question_id = "B";
    b.q_emb = unit({0.6, 0.8});
    b.i_emb = unit({0.6, 0.8});
    index.entries = {a, b};

    ShotSelection sel = select_shots(index, qx, unit({1, 0}), 1);
    REQUIRE(sel.exemplars.size() == 1);
    CHECK(sel.exemplars[0].question_id == "B");  // 0.6 > 0.5
    CHECK(sel.scores[0] == Catch::Approx(0.6));
}

TEST_CASE("select_shots n=0 is the zero-shot case") {
    ExemplarIndex index = random_index(5, 4, 1, SelectionMode::image_question);
    ShotSelection sel = select_shots(index, unit({1, 0, 0, 0}), unit({0, 1, 0, 0}), 0);
    CHECK(sel.exemplars.empty());
    CHECK(sel.scores.empty());
}

TEST_CASE("select_shots rejects n beyond the index size") {
    ExemplarIndex index = random_index(3, 4, 2, SelectionMode::image_question);
    CHECK_THROWS_AS(select_shots(index, unit({1, 0, 0, 0}), unit({0, 1, 0, 0}), 4), ValidationError);
}

TEST_CASE("select_shots matches the brute-force oracle on random instances") {
    for (SelectionMode mode : {SelectionMode::image_question, SelectionMode::question_only}) {
        ExemplarIndex index = random_index(1000, 8, 99, mode);
        CounterRng rng(1234);
        for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
            EmbeddingVector q = random_unit(rng, 8);
            EmbeddingVector i = random_unit(rng, 8);
            ShotSelection sel = select_shots(index, q, i, n);
            std::vector<std::string> got;
            for (const Exemplar& e : sel.exemplars) got.push_back(e.question_id);
            CHECK(got == brute_force_ranking(index, q, i, n));
            // Scores non-increasing.
            for (std::size_t j = 1; j < sel.scores.size(); ++j)
                CHECK(sel.scores[j] <= sel.scores[j - 1]);
        }
    }
}

TEST_CASE("raising both similarities cannot lower an entry's rank") {
    ExemplarIndex index = random_index(50, 4, 5, SelectionMode::image_question);
    CounterRng rng(7);
    EmbeddingVector q = random_unit(rng, 4);
    EmbeddingVector i = random_unit(rng, 4);

    ShotSelection before = select_shots(index, q, i, 50);
    auto rank_of = [](const ShotSelection& sel, const std::string& qid) {
        for (std::size_t r = 0; r < sel.exemplars.size(); ++r)
            if (sel.exemplars[r].question_id == qid) return r;
        return sel.exemplars.size();
    };

    // Move entry q000025's embeddings toward the query: both sims rise.
    std::size_t target = 25;
    std::string qid = index.entries[target].question_id;
    double before_rank = static_cast<double>(rank_of(before, qid));
    for (std::size_t d = 0; d < 4; ++d) {
        index.entries[target].q_emb.values[d] =
            0.5 * index.entries[target].q_emb.values[d] + 0.5 * q.values[d];
        index.entries[target].i_emb.values[d] =
            0.5 * index.entries[target].i_emb.values[d] + 0.5 * i.values[d];
    }
    index.entries[target].q_emb.normalize();
    index.entries[target].i_emb.normalize();

    ShotSelection after = select_shots(index, q, i, 50);
    CHECK(static_cast<double>(rank_of(after, qid)) <= before_rank);
}

TEST_CASE("modes agree when all image similarities are equal") {
    // Same i_emb for every entry: the image term is a constant shift.
    ExemplarIndex index = random_index(100, 6, 11, SelectionMode::image_question);
    CounterRng rng(3);
    EmbeddingVector shared = random_unit(rng, 6);
    for (Exemplar& e : index.entries) e.i_emb = shared;
    EmbeddingVector q = random_unit(rng, 6);
    EmbeddingVector i = random_unit(rng, 6);

    ShotSelection combined = select_shots(index, q, i, 10);
    index.selection_mode = SelectionMode::question_only;
    ShotSelection question_only = select_shots(index, q, i, 10);
    for (std::size_t j = 0; j < 10; ++j)
        CHECK(combined.exemplars[j].question_id == question_only.exemplars[j].question_id);
}

TEST_CASE("build_index validates and normalizes") {
    MockEmbedderBackend embedder({Role::embedder, "mock-clip", "mock", Capability::both}, 8);
    std::vector<ExemplarSource> samples;
    for (int i = 0; i < 3; ++i) {
        ExemplarSource s;
        s.question_id = "q" + std::to_string(i);
        s.image_id = "img" + std::to_string(i);
        s.question = "what is it?";
        s.answer = "Dog";
        s.greedy_caption = "a dog";
        samples.push_back(s);
    }
    ExemplarIndex index = build_index(samples, &embedder);
    CHECK(index.entries.size() == 3);
    CHECK(index.dim == 8);
    CHECK(index.entries[0].answer == "dog");  // lowercased at ingestion
    for (const Exemplar& e : index.entries) {
        CHECK(e.q_emb.norm() == Catch::Approx(1.0).margin(1e-6));
        CHECK(e.i_emb.norm() == Catch::Approx(1.0).margin(1e-6));
    }

    samples.push_back(samples[0]);  // duplicate question_id
    try {
        build_index(samples, &embedder);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("q0") != std::string::npos);
    }
}

TEST_CASE("non-unit precomputed vectors are normalized at ingestion") {
    ExemplarSource s;
    s.question_id = "q0";
    s.image_id = "img0";
    s.question = "q";
    s.answer = "a";
    s.greedy_caption = "c";
    s.q_emb = EmbeddingVector{{3.0, 4.0}};
    s.i_emb = EmbeddingVector{{0.0, 2.0}};
    ExemplarIndex index = build_index({s}, nullptr);
    CHECK(index.entries[0].q_emb.norm() == Catch::Approx(1.0).margin(1e-6));
    CHECK(index.entries[0].q_emb.values[0] == Catch::Approx(0.6));
}

TEST_CASE("index persistence round-trips byte-exactly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "vqapipe_index_test";
    fs::create_directories(dir);
    fs::path path_a = dir / "index_a.jsonl";
    fs::path path_b = dir / "index_b.jsonl";

    ExemplarIndex index = random_index(10, 6, 77, SelectionMode::image_question);
    save_index(index, path_a.string());
    ExemplarIndex loaded = load_index(path_a.string());
    save_index(loaded, path_b.string());

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(path_a) == slurp(path_b));
    CHECK(loaded.entries.size() == index.entries.size());
    CHECK(loaded.dim == index.dim);

    fs::remove_all(dir);
}

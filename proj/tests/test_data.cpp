#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cider/data.hpp"
#include "cider/rng.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

using namespace cider;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/cider_test_") + name;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// per-class raw occurrence counts over the training split
std::map<int, std::vector<long>> train_token_counts(const Dataset& ds) {
    std::map<int, std::vector<long>> counts;
    for (const Sample& s : ds.samples) {
        if (s.split != Split::Train) continue;
        int label = label_of(s.score, ds.cls);
        for (int tok : s.tokens) {
            auto& row = counts[tok];
            if (row.empty()) row.assign(static_cast<size_t>(ds.cls), 0);
            row[static_cast<size_t>(label)] += 1;
        }
    }
    return counts;
}

double cv_of(const std::vector<long>& n) {
    double mu = 0.0;
    for (long x : n) mu += static_cast<double>(x);
    mu /= static_cast<double>(n.size());
    double var = 0.0;
    for (long x : n) var += (x - mu) * (x - mu);
    var /= static_cast<double>(n.size()); // population variance
    return std::sqrt(var) / mu;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
    if (a.samples.size() != b.samples.size() || a.vocab_size != b.vocab_size ||
        a.d_a != b.d_a || a.d_v != b.d_v)
        return false;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        const Sample &x = a.samples[i], &y = b.samples[i];
        if (x.id != y.id || x.split != y.split || x.score != y.score || x.tokens != y.tokens)
            return false;
        if (x.audio != y.audio || x.vision != y.vision) return false;
    }
    return true;
}

} // namespace

TEST_CASE("label mapping for 2-class and 7-class scores") {
    CHECK(label_of(-0.01, 2) == 0);
    CHECK(label_of(0.0, 2) == 1);
    CHECK(label_of(2.7, 2) == 1);
    CHECK(label_of(-3.0, 7) == 0);
    CHECK(label_of(-0.4, 7) == 3);  // rounds toward 0
    CHECK(label_of(1.6, 7) == 5);
    CHECK(label_of(3.0, 7) == 6);
    CHECK(label_of(2.51, 7) == 6);
    CHECK_THROWS(label_of(0.0, 5));
}

TEST_CASE("load_dataset parses valid records and counts them") {
    std::string path = temp_path("ok.jsonl");
    write_file(path,
               R"({"id":"a","split":"train","score":1.5,"tokens":[1,3,4],"audio":[[0.1,0.2],[0.3,0.4]],"vision":[[1.0]]})"
               "\n"
               R"({"id":"b","split":"valid","score":-2.0,"tokens":[1,5],"audio":[[0.0,0.0]],"vision":[[2.0]]})"
               "\n"
               R"({"id":"c","split":"test","score":0.0,"tokens":[1],"audio":[[1.0,2.0]],"vision":[[3.0]]})"
               "\n");
    Dataset ds = load_dataset(path);
    CHECK(ds.samples.size() == 3);
    CHECK(ds.d_a == 2);
    CHECK(ds.d_v == 1);
    CHECK(ds.vocab_size == 6); // max id 5, plus one
    CHECK(ds.samples[1].split == Split::Valid);
    CHECK(ds.samples[0].audio(1, 1) == doctest::Approx(0.4));
    std::remove(path.c_str());
}

TEST_CASE("load_dataset rejects malformed input with located errors") {
    std::string path = temp_path("bad.jsonl");

    // audio row width differs from the first sample's d_a
    write_file(path,
               R"({"id":"a","split":"train","score":0.5,"tokens":[1,3],"audio":[[0.1,0.2]],"vision":[[1.0]]})"
               "\n"
               R"({"id":"b","split":"train","score":0.5,"tokens":[1,3],"audio":[[0.1,0.2,0.3]],"vision":[[1.0]]})"
               "\n");
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("audio"), std::runtime_error);

    // ragged rows inside one record
    write_file(path,
               R"({"id":"a","split":"train","score":0.5,"tokens":[1,3],"audio":[[0.1],[0.2,0.3]],"vision":[[1.0]]})"
               "\n");
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("audio"), std::runtime_error);

    // broken JSON names the line
    write_file(path, "{\"id\": \n");
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 1"), std::runtime_error);

    std::remove(path.c_str());
}

TEST_CASE("load_dataset accepts an empty file") {
    std::string path = temp_path("empty.jsonl");
    write_file(path, "");
    Dataset ds = load_dataset(path);
    CHECK(ds.samples.empty());
    std::remove(path.c_str());
}

TEST_CASE("synthetic corpus is deterministic and round-trips through files") {
    Dataset a = synth_dataset(100, 2, 0.0, 1);
    Dataset b = synth_dataset(100, 2, 0.0, 1);
    CHECK(datasets_equal(a, b));

    std::string path = temp_path("roundtrip.jsonl");
    save_dataset(a, path);
    Dataset c = load_dataset(path, 2);
    CHECK(c.samples.size() == a.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(c.samples[i].tokens == a.samples[i].tokens);
        CHECK(c.samples[i].score == a.samples[i].score);
        CHECK((c.samples[i].audio - a.samples[i].audio).cwiseAbs().maxCoeff() == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("synthetic corpus structure: splits, lengths, reserved ids") {
    Dataset ds = synth_dataset(200, 2, 0.5, 9);
    CHECK(ds.samples.size() == 200);
    CHECK(ds.split_indices(Split::Train).size() == 140);
    CHECK(ds.split_indices(Split::Valid).size() == 30);
    CHECK(ds.split_indices(Split::Test).size() == 30);
    for (const Sample& s : ds.samples) {
        CHECK(s.tokens[0] == kBosId);
        CHECK(s.tokens.size() == 12);
        CHECK(s.audio.rows() == 20);
        CHECK(s.vision.rows() == 16);
        CHECK(s.score >= -3.0);
        CHECK(s.score <= 3.0);
        for (int t : s.tokens) {
            CHECK(t < ds.vocab_size);
            CHECK(t != kPadId);
            CHECK(t != kMaskId);
        }
    }

    SynthSpec aligned;
    aligned.aligned = true;
    Dataset al = synth_dataset(50, 2, 0.0, 3, aligned);
    CHECK(al.samples[0].audio.rows() == al.samples[0].tokens.size());
    CHECK(al.samples[0].vision.rows() == al.samples[0].tokens.size());
}

TEST_CASE("token class-balance responds to bias_strength") {
    // no bias: every frequent token's per-class coefficient of variation stays small
    {
        Dataset ds = synth_dataset(2000, 2, 0.0, 5);
        auto counts = train_token_counts(ds);
        for (const auto& [tok, row] : counts) {
            CHECK(cv_of(row) < 0.1);
        }
    }
    // full bias: the class-linked tokens separate sharply
    {
        Dataset ds = synth_dataset(2000, 2, 1.0, 5);
        auto counts = train_token_counts(ds);
        double worst = 0.0;
        for (const auto& [tok, row] : counts) worst = std::max(worst, cv_of(row));
        CHECK(worst >= 0.1);
    }
}

TEST_CASE("biased test split flips the token-class association") {
    Dataset ds = synth_dataset(1500, 2, 1.0, 11);
    int bias0 = ds.vocab_size - 2; // token linked to class 0 during training
    auto assoc = [&](Split split) {
        // fraction of bias0 occurrences that land in class-0 samples
        long in0 = 0, total = 0;
        for (const Sample& s : ds.samples) {
            if (s.split != split) continue;
            int label = label_of(s.score, 2);
            for (int t : s.tokens)
                if (t == bias0) {
                    ++total;
                    if (label == 0) ++in0;
                }
        }
        return static_cast<double>(in0) / static_cast<double>(total);
    };
    CHECK(assoc(Split::Train) > 0.95);
    CHECK(assoc(Split::Test) < 0.05);
}

TEST_CASE("embed_text is a per-position table lookup") {
    Mat table = Mat::Zero(5, 3);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) table(r, c) = r * 10 + c;
    table.row(0).setZero();

    Mat single = embed_text({0}, table);
    CHECK(single.rows() == 1);
    CHECK(single.cwiseAbs().maxCoeff() == 0.0);

    Mat mask_row = embed_text({kMaskId}, table);
    CHECK(mask_row.row(0) == table.row(kMaskId));

    std::vector<int> toks = {3, 1, 4, 1};
    std::vector<int> perm = {1, 4, 3, 1};
    Mat e1 = embed_text(toks, table);
    Mat e2 = embed_text(perm, table);
    CHECK(e1.row(0) == e2.row(2));
    CHECK(e1.row(1) == e2.row(0));
    CHECK(e1.row(2) == e2.row(1));

    CHECK_THROWS_AS(embed_text({7}, table), std::out_of_range);
}

TEST_CASE("conv_project: width-1 kernel equals a per-row linear map") {
    Rng rng(21);
    Mat x(5, 3), w(3, 4), b(1, 4);
    for (long i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1, 1);
    for (long i = 0; i < w.size(); ++i) w(i) = rng.uniform(-1, 1);
    for (long i = 0; i < b.size(); ++i) b(i) = rng.uniform(-1, 1);

    Mat out = conv_project(x, w, b, 1);
    CHECK(out.rows() == 5);
    Mat expect = (x * w).rowwise() + b.row(0);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);

    Mat zero_in = Mat::Zero(4, 3);
    Mat out0 = conv_project(zero_in, w, b, 1);
    for (long r = 0; r < 4; ++r) CHECK((out0.row(r) - b.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv_project: width-3 kernel matches a hand-computed window sum") {
    // d_in = 1, d_out = 1, taps (2, 3, 5) over sequence (1, 10, 100)
    Mat x(3, 1), w(3, 1), b(1, 1);
    x << 1, 10, 100;
    w << 2, 3, 5; // tap order: previous row, current row, next row
    b << 0.5;
    Mat out = conv_project(x, w, b, 3);
    // row 0: 2*pad + 3*1 + 5*10 = 53; row 1: 2*1 + 3*10 + 5*100 = 532; row 2: 2*10 + 3*100 + 5*pad = 320
    CHECK(out(0, 0) == doctest::Approx(53.5));
    CHECK(out(1, 0) == doctest::Approx(532.5));
    CHECK(out(2, 0) == doctest::Approx(320.5));
}

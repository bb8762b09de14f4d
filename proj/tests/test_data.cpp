#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "lipreg/data.hpp"

using namespace lipreg;

TEST_CASE("load_ratings parses MovieLens-style lines") {
    std::istringstream in("1::31::3::874965758\n2::7::5::874965759\n");
    DatasetSchema schema;
    const auto r = load_ratings_from_stream(in, schema);
    REQUIRE(r.records.size() == 2);
    CHECK(r.skipped == 0);
    CHECK(r.records[0].user_id == "1");
    CHECK(r.records[0].item_id == "31");
    CHECK(r.records[0].rating == 3);
    CHECK(r.records[0].timestamp == 874965758);
    CHECK(r.records[0].context.empty());
}

TEST_CASE("load_ratings handles tab separator, no timestamp, and context") {
    std::istringstream in("u1\ti1\t4\tweekend\tmobile\nu2\ti2\t2\tweekday\tdesktop\n");
    DatasetSchema schema;
    schema.separator = "\t";
    schema.has_timestamp = false;
    schema.n_context = 2;
    const auto r = load_ratings_from_stream(in, schema);
    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].context == std::vector<std::string>{"weekend", "mobile"});
    CHECK(r.records[0].timestamp == 0);
}

TEST_CASE("load_ratings skips malformed and out-of-range lines") {
    std::istringstream in(
        "1::1::3::1\n"
        "2::2::9::2\n"       // rating out of [1,5]
        "3::3::0::3\n"       // rating below 1
        "4::4::4\n"          // missing timestamp column
        "5::5::x::5\n"       // non-integer rating
        "6::6::2::6\n");
    const auto r = load_ratings_from_stream(in, DatasetSchema{});
    CHECK(r.records.size() == 2);
    CHECK(r.skipped == 4);
}

TEST_CASE("load_ratings of empty input is empty with zero skipped") {
    std::istringstream in("");
    const auto r = load_ratings_from_stream(in, DatasetSchema{});
    CHECK(r.records.empty());
    CHECK(r.skipped == 0);
}

TEST_CASE("load_ratings strips CR line endings") {
    std::istringstream in("1::2::3::4\r\n");
    const auto r = load_ratings_from_stream(in, DatasetSchema{});
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].timestamp == 4);
}

TEST_CASE("load_ratings on a missing file is an io error") {
    CHECK_THROWS_AS(load_ratings("/nonexistent/ratings.dat", DatasetSchema{}), IoError);
}

TEST_CASE("binarize thresholds with equality negative") {
    CHECK(binarize(4, 3, 5) == 1);
    CHECK(binarize(3, 3, 5) == 0);
    CHECK(binarize(1, 3, 5) == 0);
    CHECK(binarize(5, 3, 5) == 1);
    CHECK_THROWS_AS(binarize(0, 3, 5), ArgumentError);
    CHECK_THROWS_AS(binarize(6, 3, 5), ArgumentError);
    CHECK_THROWS_AS(binarize(2, 0, 5), ArgumentError);
    CHECK_THROWS_AS(binarize(2, 5, 5), ArgumentError);
}

TEST_CASE("vocabulary interning keeps first-occurrence order with OOV at the end") {
    Vocabulary v;
    CHECK(v.intern("b") == 0);
    CHECK(v.intern("a") == 1);
    CHECK(v.intern("b") == 0);
    CHECK(v.size() == 2);
    CHECK(v.oov_index() == 2);
    CHECK(v.table_rows() == 3);
    CHECK(v.lookup("a") == 1);
    CHECK(v.lookup("unseen") == 2);
}

namespace {

std::vector<RatingRecord> sample_records() {
    std::vector<RatingRecord> rs;
    const char* users[] = {"1", "2", "1", "3", "2", "1"};
    const char* items[] = {"a", "b", "a", "c", "b", "a"};
    const int ratings[] = {5, 2, 3, 4, 1, 4};
    for (int i = 0; i < 6; ++i) {
        RatingRecord r;
        r.user_id = users[i];
        r.item_id = items[i];
        r.rating = ratings[i];
        rs.push_back(r);
    }
    return rs;
}

}  // namespace

TEST_CASE("build_feature_space dedups tokens and copies dimensions") {
    const auto fs = build_feature_space(sample_records(), 5, 3, 4, 0);
    CHECK(fs.user_vocab.size() == 3);
    CHECK(fs.item_vocab.size() == 3);
    CHECK(fs.context_vocabs.empty());
    CHECK(fs.d == 4);
    CHECK(fs.d_prime() == 0);
    CHECK(fs.input_dim() == 8);
    CHECK_THROWS_AS(build_feature_space({}, 5, 3, 4, 0), ArgumentError);
    CHECK_THROWS_AS(build_feature_space(sample_records(), 5, 5, 4, 0), ArgumentError);
}

TEST_CASE("encode_record maps tokens, labels, and OOV") {
    const auto fs = build_feature_space(sample_records(), 5, 3, 4, 0);
    RatingRecord rec;
    rec.user_id = "2";
    rec.item_id = "never-seen";
    rec.rating = 4;
    const Example ex = encode_record(rec, fs);
    CHECK(ex.user == fs.user_vocab.lookup("2"));
    CHECK(ex.item == fs.item_vocab.oov_index());
    CHECK(ex.rating == 4);
    CHECK(ex.label == 1);
}

TEST_CASE("split_dataset floors valid/test and gives the remainder to train") {
    SynthConfig sc;
    sc.n_records = 10;
    sc.seed = 1;
    const auto recs = synthesize(sc);
    const auto fs = build_feature_space(recs, 5, 3, 4, 0);
    const auto ds = split_dataset(recs, fs, 0.8, 0.1, 0.1, 3);
    CHECK(ds.train.size() == 8);
    CHECK(ds.valid.size() == 1);
    CHECK(ds.test.size() == 1);

    // 7 records: floors are 0, everything lands in train.
    const std::vector<RatingRecord> seven(recs.begin(), recs.begin() + 7);
    const auto ds7 = split_dataset(seven, fs, 0.8, 0.1, 0.1, 3);
    CHECK(ds7.train.size() == 7);
    CHECK(ds7.valid.empty());
    CHECK(ds7.test.empty());
}

TEST_CASE("split_dataset is deterministic and partitions the records") {
    SynthConfig sc;
    sc.n_records = 103;
    sc.seed = 2;
    const auto recs = synthesize(sc);
    const auto fs = build_feature_space(recs, 5, 3, 4, 0);
    const auto a = split_dataset(recs, fs, 0.8, 0.1, 0.1, 7);
    const auto b = split_dataset(recs, fs, 0.8, 0.1, 0.1, 7);
    CHECK(a == b);
    CHECK(a.train.size() + a.valid.size() + a.test.size() == recs.size());

    // multiset equality with the encoded inputs
    auto key = [](const Example& e) {
        return std::tuple<std::uint32_t, std::uint32_t, std::int32_t>(e.user, e.item, e.rating);
    };
    std::multiset<std::tuple<std::uint32_t, std::uint32_t, std::int32_t>> got, want;
    for (const auto* split : {&a.train, &a.valid, &a.test}) {
        for (const auto& e : *split) got.insert(key(e));
    }
    for (const auto& r : recs) want.insert(key(encode_record(r, fs)));
    CHECK(got == want);

    // label consistency inside every split
    for (const auto* split : {&a.train, &a.valid, &a.test}) {
        for (const auto& e : *split) CHECK(e.label == binarize(e.rating, fs.t_sh, fs.rating_classes));
    }
}

TEST_CASE("split_dataset validates its inputs") {
    SynthConfig sc;
    sc.n_records = 10;
    const auto recs = synthesize(sc);
    const auto fs = build_feature_space(recs, 5, 3, 4, 0);
    CHECK_THROWS_AS(split_dataset(recs, fs, 0.5, 0.2, 0.2, 1), ArgumentError);
    CHECK_THROWS_AS(split_dataset({recs[0], recs[1]}, fs, 0.8, 0.1, 0.1, 1), ArgumentError);
}

TEST_CASE("synthesize is deterministic and spans the rating range") {
    SynthConfig sc;
    sc.n_users = 10;
    sc.n_items = 10;
    sc.n_records = 500;
    sc.seed = 7;
    const auto a = synthesize(sc);
    const auto b = synthesize(sc);
    CHECK(a == b);
    CHECK(a.size() == 500);
    std::map<int, int> hist;
    for (const auto& r : a) {
        CHECK(r.rating >= 1);
        CHECK(r.rating <= 5);
        ++hist[r.rating];
    }
    CHECK(hist.size() == 5);  // all classes hit at this size
    CHECK_THROWS_AS(synthesize(SynthConfig{0, 1, 1, 5, 1, 0.0, 0}), ArgumentError);
}

TEST_CASE("synthesize rating histogram pinned for seed 7") {
    SynthConfig sc;
    sc.n_users = 10;
    sc.n_items = 10;
    sc.n_records = 100;
    sc.noise_std = 0.5;
    sc.seed = 7;
    const auto recs = synthesize(sc);
    std::map<int, int> hist;
    for (const auto& r : recs) ++hist[r.rating];
    // regression values from a pinned fixture run
    CHECK(hist[1] == 10);
    CHECK(hist[2] == 19);
    CHECK(hist[3] == 36);
    CHECK(hist[4] == 21);
    CHECK(hist[5] == 14);
}

TEST_CASE("cache round trip is value- and byte-stable") {
    SynthConfig sc;
    sc.n_records = 60;
    sc.seed = 5;
    const auto recs = synthesize(sc);
    const auto fs = build_feature_space(recs, 5, 3, 4, 0);
    const auto ds = split_dataset(recs, fs, 0.8, 0.1, 0.1, 9);
    const std::string bytes = serialize_cache(fs, ds);
    const auto [fs2, ds2] = deserialize_cache(bytes);
    CHECK(fs2 == fs);
    CHECK(ds2 == ds);
    CHECK(serialize_cache(fs2, ds2) == bytes);
}

TEST_CASE("cache rejects bad magic, bad version, and trailing bytes") {
    SynthConfig sc;
    sc.n_records = 10;
    const auto recs = synthesize(sc);
    const auto fs = build_feature_space(recs, 5, 3, 4, 0);
    const auto ds = split_dataset(recs, fs, 0.8, 0.1, 0.1, 1);
    std::string bytes = serialize_cache(fs, ds);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_cache(bad), IoError);
    CHECK_THROWS_AS(deserialize_cache(bytes + "junk"), IoError);
    std::string badver = bytes;
    badver[4] = 9;
    CHECK_THROWS_AS(deserialize_cache(badver), IoError);
}

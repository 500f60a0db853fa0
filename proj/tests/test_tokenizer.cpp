#include <doctest.h>

#include <filesystem>

#include "camf/error.hpp"
#include "camf/rng.hpp"
#include "camf/tokenizer.hpp"

using namespace camf;

namespace {

Vocabulary learn(std::vector<std::string> corpus, std::size_t size) {
    return Vocabulary::learn(corpus, size);
}

int id(const Vocabulary& v, const std::string& tok) {
    auto i = v.find(tok);
    REQUIRE(i.has_value());
    return *i;
}

}  // namespace

TEST_CASE("learn_vocab examples") {
    SUBCASE("minimal target gives zero merges") {
        // initial symbols of "ab" are "a" and "b</w>"
        const auto v = learn({"ab"}, 2 + kNumSpecials);
        CHECK(v.merges().empty());
        CHECK(v.size() == 7);
        CHECK(v.find("a").has_value());
        CHECK(v.find("b</w>").has_value());
    }
    SUBCASE("aaab corpus merges (a,a) then (aa,a)") {
        const auto v = learn({"aaab", "aaab"}, 100);
        REQUIRE(v.merges().size() >= 2);
        CHECK(v.merges()[0] == Vocabulary::Merge{"a", "a"});
        CHECK(v.merges()[1] == Vocabulary::Merge{"aa", "a"});
    }
    SUBCASE("empty glosses contribute nothing") {
        const auto v = learn({"", "ab ab", ""}, 50);
        CHECK(v.encode("") == std::vector<int>{kBos, kEos});
        CHECK(v.decode(v.encode("ab ab")) == "ab ab");
    }
    SUBCASE("target below the inventory is rejected") {
        CHECK_THROWS_AS(learn({"abc"}, 3 + kNumSpecials - 1), InvalidConfig);
    }
    SUBCASE("empty corpus is rejected") {
        CHECK_THROWS_AS(learn({}, 10), InvalidInput);
    }
}

TEST_CASE("encode and decode examples") {
    const auto two_merges = learn({"aaab", "aaab"}, 2 + kNumSpecials + 2);
    REQUIRE(two_merges.merges().size() == 2);
    CHECK(two_merges.encode("aaab") ==
          std::vector<int>{kBos, id(two_merges, "aaa"), id(two_merges, "b</w>"), kEos});
    CHECK(two_merges.decode(std::vector<int>{kBos, kEos}).empty());

    const auto v = learn({"the cat sat", "a cat"}, 40);
    CHECK(v.encode("") == std::vector<int>{kBos, kEos});
    CHECK(v.decode(v.encode("the cat sat")) == "the cat sat");

    SUBCASE("unknown characters become UNK and render as a placeholder") {
        const auto ids = v.encode("cat dog");
        CHECK(std::count(ids.begin(), ids.end(), kUnk) > 0);
        CHECK(v.decode(ids).find("⟨unk⟩") != std::string::npos);
    }
    SUBCASE("ids outside the vocabulary") {
        const std::vector<int> bad{kBos, static_cast<int>(v.size())};
        CHECK_THROWS_AS(v.decode(bad), IndexError);
        const std::vector<int> neg{-1};
        CHECK_THROWS_AS(v.decode(neg), IndexError);
    }
}

TEST_CASE("vocabulary invariants") {
    const auto v = learn({"a rose is a rose is a rose", "roses are red", "red red rose"}, 30);
    CHECK(v.size() <= 30);
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        CHECK(*v.find(v.token(i)) == i);
    }
    CHECK(v.token(kPad) == "<pad>");
    CHECK(v.token(kMask) == "<mask>");
    SUBCASE("learning is deterministic") {
        const auto again = learn({"a rose is a rose is a rose", "roses are red", "red red rose"}, 30);
        CHECK(again == v);
        CHECK(again.fingerprint() == v.fingerprint());
    }
    SUBCASE("specials are never produced by merges") {
        const auto s = learn({"<s> <s> <s>", "<pad> <pad>"}, 200);
        for (int i = kNumSpecials; i < static_cast<int>(s.size()); ++i) {
            CHECK(s.token(i) != "<s>");
        }
        CHECK(s.decode(s.encode("<s> <pad>")) == "<s> <pad>");
    }
    SUBCASE("JSON round trip") {
        const auto path = (std::filesystem::temp_directory_path() / "camf_vocab_test.json").string();
        v.save(path);
        const auto loaded = Vocabulary::load(path);
        CHECK(loaded == v);
        CHECK(loaded.encode("red rose") == v.encode("red rose"));
        const auto j = v.to_json();
        CHECK(j.at("specials").at("<mask>") == 4);
        CHECK(j.at("merges").size() == v.merges().size());
    }
}

TEST_CASE("round trip over the training alphabet") {
    // Each character appears inside and at the end of a word, and a double
    // space yields the bare end-of-word symbol.
    const std::vector<std::string> alphabet{"a", "b", "c", "é", "ж", "-", "."};
    std::vector<std::string> corpus;
    for (const auto& x : alphabet) {
        for (const auto& y : alphabet) corpus.push_back(x + y + " " + y + x + x);
    }
    corpus.push_back("ab  ba");
    const auto v = Vocabulary::learn(corpus, 60);
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string s;
        const auto len = rng.below(12);
        for (std::uint64_t i = 0; i < len; ++i) {
            const auto k = rng.below(alphabet.size() + 2);
            s += k >= alphabet.size() ? std::string(" ") : alphabet[k];
        }
        const auto ids = v.encode(s);
        CHECK(std::count(ids.begin(), ids.end(), kUnk) == 0);
        CHECK(v.decode(ids) == s);
    }
}

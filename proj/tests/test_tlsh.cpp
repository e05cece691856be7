#include <gtest/gtest.h>

#include <random>

#include "c2flow/tlsh.hpp"
#include "helpers.hpp"
#include "oracles/tlsh_vectors.inc"

using namespace c2flow;

TEST(Tlsh, ReferenceDigestsFromRecipes) {
    for (const auto& v : kTlshRecipes) {
        const auto bytes = testutil::recipe_bytes(v.seed, v.length, v.mode, v.mut_seed, v.mut_count);
        SCOPED_TRACE("seed " + std::to_string(v.seed) + " len " + std::to_string(v.length));
        if (v.digest == nullptr) {
            EXPECT_THROW(tlsh::digest(std::span<const std::uint8_t>(bytes)), NotHashableError);
        } else {
            EXPECT_EQ(tlsh::digest(std::span<const std::uint8_t>(bytes)).to_string(), v.digest);
        }
    }
}

TEST(Tlsh, ReferenceDigestsFromText) {
    for (const auto& v : kTlshTexts) {
        std::string text;
        for (unsigned i = 0; i < v.repeat; ++i) text += v.text;
        if (v.digest == nullptr) {
            EXPECT_THROW(tlsh::digest(text), NotHashableError);
        } else {
            EXPECT_EQ(tlsh::digest(text).to_string(), v.digest);
        }
    }
}

TEST(Tlsh, ReferenceDistances) {
    for (const auto& v : kTlshDistances) EXPECT_EQ(tlsh::distance(v.a, v.b), v.distance) << v.a << " " << v.b;
}

TEST(Tlsh, ParseRoundTrip) {
    const std::string s = kTlshRecipes[0].digest;
    EXPECT_EQ(tlsh::Digest::parse(s).to_string(), s);
    EXPECT_EQ(tlsh::Digest::parse(s.substr(2)).to_string(), s);
    EXPECT_THROW(tlsh::Digest::parse("T1ABC"), ParseError);
    EXPECT_THROW(tlsh::Digest::parse("T1" + std::string(70, 'G')), ParseError);
}

TEST(Tlsh, ShortInputRejected) {
    EXPECT_THROW(tlsh::digest(std::string(49, 'x')), NotHashableError);
    EXPECT_THROW(tlsh::digest(std::string()), NotHashableError);
}

TEST(Tlsh, DistanceIsSymmetricAndZeroOnSelf) {
    std::mt19937 rng(5);
    std::vector<tlsh::Digest> ds;
    for (int i = 0; i < 30; ++i) {
        auto b = testutil::recipe_bytes(rng(), 200 + rng() % 3000, rng() % 2, rng(), rng() % 200);
        ds.push_back(tlsh::digest(std::span<const std::uint8_t>(b)));
    }
    for (const auto& a : ds) {
        EXPECT_EQ(tlsh::distance(a, a), 0);
        for (const auto& b : ds) {
            EXPECT_GE(tlsh::distance(a, b), 0);
            EXPECT_EQ(tlsh::distance(a, b), tlsh::distance(b, a));
        }
    }
}

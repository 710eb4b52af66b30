#include "storyreel/story.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace storyreel;

namespace {

Script three_shots() {
    Script s;
    s.shots = {Shot{1, "Ava enters the forest.", {"ava"}, "forest"},
               Shot{2, "Ava meets Ben.", {"ava", "ben"}, "forest"},
               Shot{3, "They reach the river.", {"ava", "ben"}, "river"}};
    s.cuts.indices = {1, 3};
    return s;
}

Storyboard board_for_three() {
    Storyboard b;
    b.character_bank = {{"ava", "assets/a.png"}, {"ben", "assets/b.png"}};
    b.background_bank = {{"forest", "assets/f.png"}, {"river", "assets/r.png"}};
    b.keyframes = {{1, "assets/k1.png"}, {3, "assets/k3.png"}};
    return b;
}

}  // namespace

TEST_CASE("a well-formed script and storyboard validate cleanly") {
    CHECK(validate_script(three_shots()).ok());
    CHECK(validate_script(three_shots(), board_for_three()).ok());
}

TEST_CASE("first shot without a cut is rejected") {
    Script s = three_shots();
    s.cuts.indices.erase(1);
    const auto report = validate_script(s);
    REQUIRE_FALSE(report.ok());
    CHECK(report.has_rule(rules::kFirstShotKeyframe));
    CHECK(report.violations.front().shot_index == 1);
}

TEST_CASE("structural rules") {
    SUBCASE("empty script") { CHECK(validate_script(Script{}).has_rule(rules::kEmptyScript)); }
    SUBCASE("gap in indices") {
        Script s = three_shots();
        s.shots[2].index = 5;
        CHECK(validate_script(s).has_rule(rules::kIndexContiguity));
    }
    SUBCASE("duplicate index") {
        Script s = three_shots();
        s.shots[2].index = 2;
        CHECK(validate_script(s).has_rule(rules::kDuplicateIndex));
    }
    SUBCASE("empty description and background") {
        Script s = three_shots();
        s.shots[1].description.clear();
        s.shots[1].background.clear();
        const auto r = validate_script(s);
        CHECK(r.has_rule(rules::kEmptyDescription));
        CHECK(r.has_rule(rules::kEmptyBackground));
    }
    SUBCASE("cut out of range") {
        Script s = three_shots();
        s.cuts.indices.insert(4);
        CHECK(validate_script(s).has_rule(rules::kCutOutOfRange));
    }
}

TEST_CASE("storyboard rules") {
    const Script s = three_shots();
    SUBCASE("unknown character") {
        Storyboard b = board_for_three();
        b.character_bank.erase("ben");
        const auto r = validate_script(s, b);
        CHECK(r.has_rule(rules::kUnknownCharacter));
        CHECK(std::count_if(r.violations.begin(), r.violations.end(),
                            [](const Violation& v) { return v.rule == rules::kUnknownCharacter; }) == 2);
    }
    SUBCASE("unknown background") {
        Storyboard b = board_for_three();
        b.background_bank.erase("river");
        CHECK(validate_script(s, b).has_rule(rules::kUnknownBackground));
    }
    SUBCASE("missing and unexpected keyframes") {
        Storyboard b = board_for_three();
        b.keyframes.erase(3);
        b.keyframes[2] = "assets/k2.png";
        const auto r = validate_script(s, b);
        CHECK(r.has_rule(rules::kMissingKeyframe));
        CHECK(r.has_rule(rules::kUnexpectedKeyframe));
    }
    SUBCASE("unresolved asset") {
        const Storyboard b = board_for_three();
        const auto r = validate_script(s, b, [](const AssetRef& ref) { return ref != "assets/k3.png"; });
        CHECK(r.has_rule(rules::kUnresolvedAsset));
    }
}

TEST_CASE("validation is insensitive to shot order") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Script s = three_shots();
        s.shots.push_back(Shot{4, "", {"zed"}, ""});
        s.cuts.indices.insert(static_cast<int>(rng() % 7));
        const auto expected = validate_script(s, board_for_three());
        std::shuffle(s.shots.begin(), s.shots.end(), rng);
        CHECK(validate_script(s, board_for_three()) == expected);
    }
}

TEST_CASE("conditioning follows the cut set") {
    const Script s = three_shots();
    const Storyboard b = board_for_three();
    ClipAsset prior{"n1", 1, "sim://clip/1", "sim://frame/1", 4000};

    const auto c1 = conditioning_for(1, s, b, nullptr);
    CHECK(c1.kind == ConditioningKind::Keyframe);
    CHECK(c1.source == "assets/k1.png");

    const auto c2 = conditioning_for(2, s, b, &prior);
    CHECK(c2.kind == ConditioningKind::PriorLastFrame);
    CHECK(c2.source == "sim://frame/1");
    CHECK(c2.description == "Ava meets Ben.");

    CHECK_THROWS_AS(conditioning_for(2, s, b, nullptr), MissingPriorClip);
    Storyboard missing = b;
    missing.keyframes.erase(3);
    CHECK_THROWS_AS(conditioning_for(3, s, missing, &prior), MissingKeyframe);
}

TEST_CASE("script, storyboard and clip JSON round-trip") {
    const Script s = three_shots();
    CHECK(json(s).get<Script>() == s);
    const Storyboard b = board_for_three();
    CHECK(json(b).get<Storyboard>() == b);
    const ClipAsset c{"n7", 2, "sim://clip/1/7", "sim://frame/1/7", 3500};
    CHECK(json(c).get<ClipAsset>() == c);
    const Conditioning k{ConditioningKind::PriorLastFrame, "sim://frame/1/7", "desc"};
    CHECK(json(k).get<Conditioning>() == k);
}

TEST_CASE("schema errors name the offending field") {
    json j = json(three_shots());
    j["shots"][2].erase("description");
    try {
        (void)j.get<Script>();
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(e.field() == "shots[2].description");
    }
    json k = json(three_shots());
    k["shots"][1]["index"] = "two";
    try {
        (void)k.get<Script>();
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(e.field() == "shots[1].index");
    }
}

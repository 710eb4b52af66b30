#pragma once

#include "storyreel/errors.hpp"
#include "storyreel/json_util.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace storyreel {

/// Location of an asset: a content-addressed project path
/// (`assets/<sha256>.<ext>`) or an opaque backend URI.
using AssetRef = std::string;

struct Shot {
    int index = 0;  // 1-based
    std::string description;
    std::set<std::string> characters;
    std::string background;

    friend bool operator==(const Shot&, const Shot&) = default;
};

/// Shot ordinals at which a visual transition happens. Generation for these
/// shots is conditioned on a keyframe instead of the previous clip.
struct CutSet {
    std::set<int> indices;

    bool contains(int shot_index) const { return indices.count(shot_index) != 0; }

    friend bool operator==(const CutSet&, const CutSet&) = default;
};

struct Script {
    std::vector<Shot> shots;
    CutSet cuts;

    int clip_count() const { return static_cast<int>(shots.size()); }

    /// Shot with the given 1-based ordinal. Throws Error if absent.
    const Shot& shot(int index) const;
    const Shot* find_shot(int index) const;

    friend bool operator==(const Script&, const Script&) = default;
};

struct Storyboard {
    std::map<std::string, AssetRef> character_bank;
    std::map<std::string, AssetRef> background_bank;
    std::map<int, AssetRef> keyframes;  // keyed by cut index

    friend bool operator==(const Storyboard&, const Storyboard&) = default;
};

struct ClipAsset {
    std::string id;
    int shot_index = 0;
    std::string uri;
    AssetRef last_frame;
    std::int64_t duration_ms = 0;

    friend bool operator==(const ClipAsset&, const ClipAsset&) = default;
};

enum class ConditioningKind { Keyframe, PriorLastFrame };

struct Conditioning {
    ConditioningKind kind = ConditioningKind::Keyframe;
    AssetRef source;
    std::string description;

    friend bool operator==(const Conditioning&, const Conditioning&) = default;
};

std::string to_string(ConditioningKind kind);
ConditioningKind conditioning_kind_from_string(const std::string& text);

// Rule identifiers reported by validate_script.
namespace rules {
inline constexpr const char* kEmptyScript = "empty-script";
inline constexpr const char* kIndexContiguity = "index-contiguity";
inline constexpr const char* kDuplicateIndex = "duplicate-index";
inline constexpr const char* kEmptyDescription = "empty-description";
inline constexpr const char* kEmptyBackground = "empty-background";
inline constexpr const char* kCutOutOfRange = "cut-out-of-range";
inline constexpr const char* kFirstShotKeyframe = "first-shot-keyframe";
inline constexpr const char* kUnknownCharacter = "unknown-character";
inline constexpr const char* kUnknownBackground = "unknown-background";
inline constexpr const char* kMissingKeyframe = "missing-keyframe";
inline constexpr const char* kUnexpectedKeyframe = "unexpected-keyframe";
inline constexpr const char* kUnresolvedAsset = "unresolved-asset";
}  // namespace rules

struct Violation {
    int shot_index = 0;  // 0 for script-level violations
    std::string rule;
    std::string message;

    friend bool operator==(const Violation&, const Violation&) = default;
    friend auto operator<=>(const Violation&, const Violation&) = default;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool has_rule(std::string_view rule) const;

    friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

/// Returns true when an asset reference points at something that exists.
using AssetResolver = std::function<bool(const AssetRef&)>;

/// Structural checks that need only the script: contiguity, descriptions,
/// cut ranges and the first-shot keyframe rule.
ValidationReport validate_script(const Script& script);

/// Full check against a storyboard: bank membership, keyframe coverage and,
/// when `resolver` is given, that every referenced asset exists.
ValidationReport validate_script(const Script& script, const Storyboard& storyboard,
                                 const AssetResolver& resolver = {});

class ConditioningError : public Error {
public:
    using Error::Error;
};

class MissingPriorClip : public ConditioningError {
public:
    explicit MissingPriorClip(int shot)
        : ConditioningError("shot " + std::to_string(shot) + " continues from the previous clip, but none was given") {}
};

class MissingKeyframe : public ConditioningError {
public:
    explicit MissingKeyframe(int shot)
        : ConditioningError("shot " + std::to_string(shot) + " is a cut but the storyboard has no keyframe for it") {}
};

/// Picks the conditioning source for a shot: its keyframe when the shot opens
/// a cut, otherwise the last frame of the preceding clip.
Conditioning conditioning_for(int shot_index, const Script& script, const Storyboard& storyboard,
                              const ClipAsset* prior_clip);

void to_json(json& j, const Shot& shot);
void from_json(const json& j, Shot& shot);
void to_json(json& j, const CutSet& cuts);
void from_json(const json& j, CutSet& cuts);
void to_json(json& j, const Script& script);
void from_json(const json& j, Script& script);
void to_json(json& j, const Storyboard& board);
void from_json(const json& j, Storyboard& board);
void to_json(json& j, const ClipAsset& clip);
void from_json(const json& j, ClipAsset& clip);
void to_json(json& j, const Conditioning& c);
void from_json(const json& j, Conditioning& c);
void to_json(json& j, const Violation& v);
void to_json(json& j, const ValidationReport& report);

}  // namespace storyreel

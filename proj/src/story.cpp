#include "storyreel/story.hpp"

#include <algorithm>

namespace storyreel {

const Shot* Script::find_shot(int index) const {
    for (const auto& s : shots) {
        if (s.index == index) {
            return &s;
        }
    }
    return nullptr;
}

const Shot& Script::shot(int index) const {
    if (const Shot* s = find_shot(index)) {
        return *s;
    }
    throw Error("script has no shot " + std::to_string(index));
}

std::string to_string(ConditioningKind kind) {
    return kind == ConditioningKind::Keyframe ? "Keyframe" : "PriorLastFrame";
}

ConditioningKind conditioning_kind_from_string(const std::string& text) {
    if (text == "Keyframe") {
        return ConditioningKind::Keyframe;
    }
    if (text == "PriorLastFrame") {
        return ConditioningKind::PriorLastFrame;
    }
    throw SchemaError("kind", "unknown conditioning kind '" + text + "'");
}

bool ValidationReport::has_rule(std::string_view rule) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule == rule; });
}

namespace {

void add(std::vector<Violation>& out, int shot, const char* rule, std::string message) {
    out.push_back(Violation{shot, rule, std::move(message)});
}

std::vector<const Shot*> sorted_shots(const Script& script) {
    std::vector<const Shot*> shots;
    shots.reserve(script.shots.size());
    for (const auto& s : script.shots) {
        shots.push_back(&s);
    }
    std::stable_sort(shots.begin(), shots.end(), [](const Shot* a, const Shot* b) { return a->index < b->index; });
    return shots;
}

void check_structure(const Script& script, std::vector<Violation>& out) {
    const int n = script.clip_count();
    if (n == 0) {
        add(out, 0, rules::kEmptyScript, "script has no shots");
    }
    const auto shots = sorted_shots(script);
    std::set<int> seen;
    for (const Shot* s : shots) {
        if (!seen.insert(s->index).second) {
            add(out, s->index, rules::kDuplicateIndex, "shot index appears more than once");
        }
        if (s->index < 1 || s->index > n) {
            add(out, s->index, rules::kIndexContiguity,
                "shot index outside 1.." + std::to_string(n));
        }
        if (s->description.empty()) {
            add(out, s->index, rules::kEmptyDescription, "shot description is empty");
        }
        if (s->background.empty()) {
            add(out, s->index, rules::kEmptyBackground, "shot has no background");
        }
    }
    for (int cut : script.cuts.indices) {
        if (cut < 1 || cut > n) {
            add(out, cut, rules::kCutOutOfRange, "cut index outside 1.." + std::to_string(n));
        }
    }
    if (n > 0 && !script.cuts.contains(1)) {
        add(out, 1, rules::kFirstShotKeyframe, "first shot requires keyframe");
    }
}

void finish(std::vector<Violation>& out) {
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
}

}  // namespace

ValidationReport validate_script(const Script& script) {
    ValidationReport report;
    check_structure(script, report.violations);
    finish(report.violations);
    return report;
}

ValidationReport validate_script(const Script& script, const Storyboard& storyboard, const AssetResolver& resolver) {
    ValidationReport report;
    auto& out = report.violations;
    check_structure(script, out);

    for (const Shot* s : sorted_shots(script)) {
        for (const auto& c : s->characters) {
            if (storyboard.character_bank.count(c) == 0) {
                add(out, s->index, rules::kUnknownCharacter, "unknown character '" + c + "'");
            }
        }
        if (!s->background.empty() && storyboard.background_bank.count(s->background) == 0) {
            add(out, s->index, rules::kUnknownBackground, "unknown background '" + s->background + "'");
        }
    }
    for (int cut : script.cuts.indices) {
        if (storyboard.keyframes.count(cut) == 0) {
            add(out, cut, rules::kMissingKeyframe, "cut shot has no keyframe");
        }
    }
    for (const auto& [k, ref] : storyboard.keyframes) {
        if (!script.cuts.contains(k)) {
            add(out, k, rules::kUnexpectedKeyframe, "keyframe given for a shot that is not a cut");
        }
    }

    auto check_ref = [&](int shot, const std::string& what, const AssetRef& ref) {
        if (ref.empty() || (resolver && !resolver(ref))) {
            add(out, shot, rules::kUnresolvedAsset, what + " asset '" + ref + "' does not resolve");
        }
    };
    for (const auto& [id, ref] : storyboard.character_bank) {
        check_ref(0, "character " + id, ref);
    }
    for (const auto& [id, ref] : storyboard.background_bank) {
        check_ref(0, "background " + id, ref);
    }
    for (const auto& [k, ref] : storyboard.keyframes) {
        check_ref(k, "keyframe", ref);
    }

    finish(out);
    return report;
}

Conditioning conditioning_for(int shot_index, const Script& script, const Storyboard& storyboard,
                              const ClipAsset* prior_clip) {
    const Shot& shot = script.shot(shot_index);
    if (script.cuts.contains(shot_index)) {
        auto it = storyboard.keyframes.find(shot_index);
        if (it == storyboard.keyframes.end()) {
            throw MissingKeyframe(shot_index);
        }
        return Conditioning{ConditioningKind::Keyframe, it->second, shot.description};
    }
    if (prior_clip == nullptr) {
        throw MissingPriorClip(shot_index);
    }
    return Conditioning{ConditioningKind::PriorLastFrame, prior_clip->last_frame, shot.description};
}

// JSON ----------------------------------------------------------------------

void to_json(json& j, const Shot& shot) {
    j = json{{"index", shot.index},
             {"description", shot.description},
             {"characters", shot.characters},
             {"background", shot.background}};
}

void from_json(const json& j, Shot& shot) {
    shot.index = get_field<int>(j, "index");
    shot.description = get_field<std::string>(j, "description");
    shot.characters = get_field<std::set<std::string>>(j, "characters");
    shot.background = get_field<std::string>(j, "background");
}

void to_json(json& j, const CutSet& cuts) { j = json{{"indices", cuts.indices}}; }

void from_json(const json& j, CutSet& cuts) { cuts.indices = get_field<std::set<int>>(j, "indices"); }

void to_json(json& j, const Script& script) { j = json{{"shots", script.shots}, {"cuts", script.cuts}}; }

void from_json(const json& j, Script& script) {
    script.shots = get_array<Shot>(j, "shots");
    script.cuts = get_field<CutSet>(j, "cuts");
}

void to_json(json& j, const Storyboard& board) {
    json keyframes = json::object();
    for (const auto& [k, ref] : board.keyframes) {
        keyframes[std::to_string(k)] = ref;
    }
    j = json{{"characterBank", board.character_bank},
             {"backgroundBank", board.background_bank},
             {"keyframes", keyframes}};
}

void from_json(const json& j, Storyboard& board) {
    board.character_bank = get_field<std::map<std::string, AssetRef>>(j, "characterBank");
    board.background_bank = get_field<std::map<std::string, AssetRef>>(j, "backgroundBank");
    const auto keyframes = get_field<std::map<std::string, AssetRef>>(j, "keyframes");
    board.keyframes.clear();
    for (const auto& [k, ref] : keyframes) {
        std::size_t used = 0;
        int index = 0;
        try {
            index = std::stoi(k, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != k.size()) {
            throw SchemaError("keyframes." + k, "keyframe key must be a shot index");
        }
        board.keyframes[index] = ref;
    }
}

void to_json(json& j, const ClipAsset& clip) {
    j = json{{"id", clip.id},
             {"shotIndex", clip.shot_index},
             {"uri", clip.uri},
             {"lastFrame", clip.last_frame},
             {"durationMs", clip.duration_ms}};
}

void from_json(const json& j, ClipAsset& clip) {
    clip.id = get_field<std::string>(j, "id");
    clip.shot_index = get_field<int>(j, "shotIndex");
    clip.uri = get_field<std::string>(j, "uri");
    clip.last_frame = get_field<std::string>(j, "lastFrame");
    clip.duration_ms = get_field<std::int64_t>(j, "durationMs");
}

void to_json(json& j, const Conditioning& c) {
    j = json{{"kind", to_string(c.kind)}, {"source", c.source}, {"description", c.description}};
}

void from_json(const json& j, Conditioning& c) {
    c.kind = conditioning_kind_from_string(get_field<std::string>(j, "kind"));
    c.source = get_field<std::string>(j, "source");
    c.description = get_field<std::string>(j, "description");
}

void to_json(json& j, const Violation& v) {
    j = json{{"shotIndex", v.shot_index}, {"rule", v.rule}, {"message", v.message}};
}

void to_json(json& j, const ValidationReport& report) {
    j = json{{"ok", report.ok()}, {"violations", report.violations}};
}

}  // namespace storyreel

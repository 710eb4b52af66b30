#include "storyreel/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

namespace storyreel {

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

/// Runs fn(0..n-1) with at most `width` calls in flight and returns results
/// in index order.
template <typename Fn>
auto ordered_map(std::size_t n, int width, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using R = decltype(fn(std::size_t{}));
    std::vector<R> out;
    out.reserve(n);
    if (width <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(fn(i));
        }
        return out;
    }
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(width)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(width));
        std::vector<std::future<R>> inflight;
        for (std::size_t i = start; i < end; ++i) {
            inflight.push_back(std::async(std::launch::async, fn, i));
        }
        std::exception_ptr first;
        for (auto& f : inflight) {
            try {
                out.push_back(f.get());
            } catch (...) {
                if (!first) {
                    first = std::current_exception();
                }
            }
        }
        if (first) {
            std::rethrow_exception(first);
        }
    }
    return out;
}

json violations_json(const ValidationReport& report) { return json(report); }

}  // namespace

// Stages --------------------------------------------------------------------------

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::New:
            return "New";
        case Stage::Planned:
            return "Planned";
        case Stage::Storyboarded:
            return "Storyboarded";
        case Stage::Shot:
            return "Shot";
        case Stage::Assembled:
            return "Assembled";
    }
    return "?";
}

Stage stage_from_string(const std::string& text) {
    for (Stage s : {Stage::New, Stage::Planned, Stage::Storyboarded, Stage::Shot, Stage::Assembled}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    throw SchemaError("stage", "unknown stage '" + text + "'");
}

void to_json(json& j, const PipelineState& s) {
    j = json{{"stage", to_string(s.stage)}, {"timestamps", s.timestamps}};
}

void from_json(const json& j, PipelineState& s) {
    s.stage = stage_from_string(get_field<std::string>(j, "stage"));
    s.timestamps = get_field_or<std::map<std::string, std::string>>(j, "timestamps", {});
}

// Planning ------------------------------------------------------------------------

Script plan(const std::string& story_text, CompletionPort& llm, int max_attempts, int* attempts_used) {
    if (story_text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error("story text is empty");
    }
    ValidationReport last;
    std::string problem;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempts_used != nullptr) {
            *attempts_used = attempt;
        }
        json request{{"task", "script"}, {"story", story_text}, {"attempt", attempt}};
        if (attempt > 1) {
            request["feedback"] = json{{"violations", violations_json(last)["violations"]}, {"error", problem}};
        }
        const std::string raw = llm.complete(request);
        const json parsed = json::parse(raw, nullptr, false);
        last = ValidationReport{};
        if (parsed.is_discarded()) {
            problem = "response is not JSON";
            continue;
        }
        Script script;
        try {
            script = parsed.get<Script>();
        } catch (const SchemaError& e) {
            problem = e.what();
            continue;
        } catch (const json::exception& e) {
            problem = e.what();
            continue;
        }
        last = validate_script(script);
        if (last.ok()) {
            return script;
        }
        problem.clear();
    }
    std::string what = "script planning failed after " + std::to_string(max_attempts) + " attempts";
    if (!problem.empty()) {
        what += ": " + problem;
    }
    for (const auto& v : last.violations) {
        what += " [shot " + std::to_string(v.shot_index) + " " + v.rule + "]";
    }
    throw PlanningFailed(what, last, max_attempts);
}

// Storyboard -----------------------------------------------------------------------

namespace {

AssetRef store_image(const ImageResult& image, AssetStore& store, const std::string& asset) {
    if (!image.bytes.empty()) {
        return store.put(image.bytes, image.ext);
    }
    if (!image.uri.empty()) {
        return image.uri;
    }
    throw GenerationFailed(asset, "backend returned neither bytes nor a uri");
}

std::string first_mention(const Script& script, const std::function<bool(const Shot&)>& pred) {
    for (const auto& s : script.shots) {
        if (pred(s)) {
            return s.description;
        }
    }
    return {};
}

}  // namespace

Storyboard build_storyboard(const Script& script, ImagePort& bank_images, ImagePort& keyframe_images,
                            AssetStore& store, const RetryPolicy& retry, int max_concurrency) {
    std::set<std::string> characters;
    std::set<std::string> backgrounds;
    for (const auto& s : script.shots) {
        characters.insert(s.characters.begin(), s.characters.end());
        backgrounds.insert(s.background);
    }

    std::vector<ImageRequest> bank;
    for (const auto& c : characters) {
        bank.push_back({"character", c,
                        "Character '" + c + "', as seen in: " +
                            first_mention(script, [&](const Shot& s) { return s.characters.count(c) != 0; }),
                        {}});
    }
    for (const auto& b : backgrounds) {
        bank.push_back({"background", b,
                        "Background '" + b + "', as seen in: " +
                            first_mention(script, [&](const Shot& s) { return s.background == b; }),
                        {}});
    }

    auto request = [&](ImagePort& port, const ImageRequest& r) {
        const std::string name = r.kind + ":" + r.id;
        try {
            return store_image(with_retry(retry, [&] { return port.generate(r); }), store, name);
        } catch (const GenerationFailed&) {
            throw;
        } catch (const Error& e) {
            throw GenerationFailed(name, e.what());
        }
    };

    const auto bank_refs =
        ordered_map(bank.size(), max_concurrency, [&](std::size_t i) { return request(bank_images, bank[i]); });
    Storyboard board;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        auto& target = bank[i].kind == "character" ? board.character_bank : board.background_bank;
        target[bank[i].id] = bank_refs[i];
    }

    std::vector<ImageRequest> keyframes;
    for (int k : script.cuts.indices) {
        const Shot* shot = script.find_shot(k);
        if (shot == nullptr) {
            continue;
        }
        ImageRequest r{"keyframe", "shot-" + std::to_string(k), shot->description, {}};
        for (const auto& c : shot->characters) {
            r.references.push_back(board.character_bank.at(c));
        }
        r.references.push_back(board.background_bank.at(shot->background));
        keyframes.push_back(std::move(r));
    }
    const auto key_refs = ordered_map(keyframes.size(), max_concurrency,
                                      [&](std::size_t i) { return request(keyframe_images, keyframes[i]); });
    std::size_t i = 0;
    for (int k : script.cuts.indices) {
        if (script.find_shot(k) != nullptr) {
            board.keyframes[k] = key_refs[i++];
        }
    }
    return board;
}

// Voiceover -----------------------------------------------------------------------

namespace {

std::string to_string(LineKind kind) { return kind == LineKind::Dialogue ? "dialogue" : "narration"; }

LineKind line_kind_from_string(const std::string& text) {
    if (text == "narration") {
        return LineKind::Narration;
    }
    if (text == "dialogue") {
        return LineKind::Dialogue;
    }
    throw SchemaError("kind", "expected 'narration' or 'dialogue', got '" + text + "'");
}

std::string to_string(SyncStatus s) {
    switch (s) {
        case SyncStatus::Pass:
            return "pass";
        case SyncStatus::Refit:
            return "refit";
        case SyncStatus::Silent:
            return "silent";
    }
    return "?";
}

SyncStatus sync_status_from_string(const std::string& text) {
    for (SyncStatus s : {SyncStatus::Pass, SyncStatus::Refit, SyncStatus::Silent}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    throw SchemaError("status", "unknown sync status '" + text + "'");
}

}  // namespace

void to_json(json& j, const VoiceoverEntry& e) {
    j = json{{"shotIndex", e.shot_index},    {"kind", to_string(e.kind)}, {"speaker", e.speaker},
             {"text", e.text},               {"emotion", e.emotion},     {"voiceProfile", e.voice_profile},
             {"estimatedMs", e.estimated_ms}, {"oversize", e.oversize}};
}

void from_json(const json& j, VoiceoverEntry& e) {
    e.shot_index = get_field<int>(j, "shotIndex");
    e.kind = line_kind_from_string(get_field_or<std::string>(j, "kind", "narration"));
    e.speaker = get_field_or<std::string>(j, "speaker", e.kind == LineKind::Narration ? "narrator" : "");
    e.text = get_field_or<std::string>(j, "text", "");
    e.emotion = get_field_or<std::string>(j, "emotion", "");
    e.voice_profile = get_field_or<std::string>(j, "voiceProfile", "");
    e.estimated_ms = get_field_or<std::int64_t>(j, "estimatedMs", 0);
    e.oversize = get_field_or(j, "oversize", false);
}

void to_json(json& j, const VoiceoverScript& v) { j = json{{"entries", v.entries}}; }

void from_json(const json& j, VoiceoverScript& v) { v.entries = get_array<VoiceoverEntry>(j, "entries"); }

VoiceTable VoiceTable::defaults() {
    VoiceTable t;
    for (const char* age : {"child", "teen", "adult", "elder"}) {
        for (const char* gender : {"female", "male", "unspecified"}) {
            t.profiles[std::string(age) + "/" + gender] = std::string(age) + "-" + gender;
        }
    }
    return t;
}

std::string VoiceTable::profile_for(const std::string& speaker) const {
    if (speaker.empty() || speaker == "narrator") {
        return narrator;
    }
    const auto c = characters.find(speaker);
    const CharacterTraits traits = c == characters.end() ? CharacterTraits{} : c->second;
    const auto p = profiles.find(traits.age + "/" + traits.gender);
    return p == profiles.end() ? fallback : p->second;
}

void to_json(json& j, const VoiceTable& t) {
    json chars = json::object();
    for (const auto& [id, tr] : t.characters) {
        chars[id] = json{{"age", tr.age}, {"gender", tr.gender}};
    }
    j = json{{"characters", chars}, {"profiles", t.profiles}, {"narrator", t.narrator}, {"fallback", t.fallback}};
}

void from_json(const json& j, VoiceTable& t) {
    t = VoiceTable::defaults();
    if (j.contains("characters")) {
        const json chars = get_field<json>(j, "characters");
        for (const auto& [id, v] : chars.items()) {
            const std::string where = "characters." + id;
            t.characters[id] = CharacterTraits{get_field_or<std::string>(v, "age", "adult", where),
                                               get_field_or<std::string>(v, "gender", "unspecified", where)};
        }
    }
    for (const auto& [k, v] : get_field_or<std::map<std::string, std::string>>(j, "profiles", {})) {
        t.profiles[k] = v;
    }
    t.narrator = get_field_or(j, "narrator", t.narrator);
    t.fallback = get_field_or(j, "fallback", t.fallback);
}

void to_json(json& j, const PostConfig& c) {
    j = json{{"charsPerSecond", c.chars_per_second},
             {"syncTolerance", c.sync_tolerance},
             {"maxTrim", c.max_trim},
             {"planAttempts", c.plan_attempts},
             {"voices", c.voices}};
}

void from_json(const json& j, PostConfig& c) {
    c.chars_per_second = get_field_or(j, "charsPerSecond", c.chars_per_second);
    c.sync_tolerance = get_field_or(j, "syncTolerance", c.sync_tolerance);
    c.max_trim = get_field_or(j, "maxTrim", c.max_trim);
    c.plan_attempts = get_field_or(j, "planAttempts", c.plan_attempts);
    if (j.contains("voices")) {
        c.voices = get_field<VoiceTable>(j, "voices");
    }
    if (!(c.chars_per_second > 0.0) || !(c.sync_tolerance >= 0.0) || !(c.max_trim >= 0.0) || c.plan_attempts < 1) {
        throw SchemaError("post", "charsPerSecond must be positive, tolerances non-negative, planAttempts >= 1");
    }
}

std::int64_t estimate_speech_ms(const std::string& text, double chars_per_second) {
    if (text.empty()) {
        return 0;
    }
    return std::max<std::int64_t>(1, std::llround(static_cast<double>(text.size()) / chars_per_second * 1000.0));
}

VoiceoverScript plan_voiceover(const Script& script, const std::vector<ClipAsset>& clips, CompletionPort& llm,
                               const PostConfig& config, int* attempts_used) {
    std::map<int, std::int64_t> durations;
    json clip_info = json::array();
    for (const auto& c : clips) {
        durations[c.shot_index] = c.duration_ms;
        clip_info.push_back(json{{"shotIndex", c.shot_index}, {"durationMs", c.duration_ms}});
    }
    std::string problem;
    for (int attempt = 1; attempt <= config.plan_attempts; ++attempt) {
        if (attempts_used != nullptr) {
            *attempts_used = attempt;
        }
        json request{{"task", "voiceover"},
                     {"script", script},
                     {"clips", clip_info},
                     {"charsPerSecond", config.chars_per_second},
                     {"attempt", attempt}};
        if (attempt > 1) {
            request["feedback"] = json{{"error", problem}};
        }
        const json parsed = json::parse(llm.complete(request), nullptr, false);
        if (parsed.is_discarded()) {
            problem = "response is not JSON";
            continue;
        }
        VoiceoverScript vo;
        try {
            vo = parsed.get<VoiceoverScript>();
        } catch (const SchemaError& e) {
            problem = e.what();
            continue;
        } catch (const json::exception& e) {
            problem = e.what();
            continue;
        }
        problem.clear();
        for (std::size_t i = 0; i < vo.entries.size() && problem.empty(); ++i) {
            const auto& e = vo.entries[i];
            if (script.find_shot(e.shot_index) == nullptr) {
                problem = "entries[" + std::to_string(i) + "].shotIndex " + std::to_string(e.shot_index) +
                          " is not a shot of the script";
            } else if (e.kind == LineKind::Dialogue && e.speaker.empty()) {
                problem = "entries[" + std::to_string(i) + "].speaker is required for dialogue";
            }
        }
        if (!problem.empty()) {
            continue;
        }
        std::set<int> covered;
        for (const auto& e : vo.entries) {
            covered.insert(e.shot_index);
        }
        for (const auto& s : script.shots) {
            if (covered.count(s.index) == 0) {
                VoiceoverEntry silent;
                silent.shot_index = s.index;
                vo.entries.push_back(silent);
            }
        }
        std::stable_sort(vo.entries.begin(), vo.entries.end(),
                         [](const VoiceoverEntry& a, const VoiceoverEntry& b) { return a.shot_index < b.shot_index; });
        for (auto& e : vo.entries) {
            e.voice_profile = config.voices.profile_for(e.kind == LineKind::Narration ? "narrator" : e.speaker);
            e.estimated_ms = estimate_speech_ms(e.text, config.chars_per_second);
            auto d = durations.find(e.shot_index);
            e.oversize = d != durations.end() && e.estimated_ms > d->second;
        }
        return vo;
    }
    throw PlanningFailed("voiceover planning failed after " + std::to_string(config.plan_attempts) +
                             " attempts: " + problem,
                         ValidationReport{}, config.plan_attempts);
}

// Speech synthesis ------------------------------------------------------------------

void to_json(json& j, const AudioCheck& c) {
    j = json{{"entry", c.entry},
             {"shotIndex", c.shot_index},
             {"audio", c.audio},
             {"estimatedMs", c.estimated_ms},
             {"measuredMs", c.measured_ms},
             {"attempts", c.attempts},
             {"status", to_string(c.status)}};
}

void from_json(const json& j, AudioCheck& c) {
    c.entry = get_field<int>(j, "entry");
    c.shot_index = get_field<int>(j, "shotIndex");
    c.audio = get_field<std::string>(j, "audio");
    c.estimated_ms = get_field<std::int64_t>(j, "estimatedMs");
    c.measured_ms = get_field<std::int64_t>(j, "measuredMs");
    c.attempts = get_field<int>(j, "attempts");
    c.status = sync_status_from_string(get_field<std::string>(j, "status"));
}

bool within_sync_tolerance(std::int64_t estimated_ms, std::int64_t measured_ms, double tolerance) {
    const double diff = std::abs(static_cast<double>(measured_ms - estimated_ms));
    return diff <= tolerance * static_cast<double>(estimated_ms);
}

std::vector<AudioCheck> synthesize_and_check(const VoiceoverScript& vo, TtsPort& tts, AssetStore& store,
                                             const PostConfig& config, const RetryPolicy& retry) {
    std::vector<AudioCheck> checks;
    for (std::size_t i = 0; i < vo.entries.size(); ++i) {
        const VoiceoverEntry& e = vo.entries[i];
        AudioCheck check;
        check.entry = static_cast<int>(i);
        check.shot_index = e.shot_index;
        check.estimated_ms = e.estimated_ms;
        if (e.text.empty()) {
            check.status = SyncStatus::Silent;
            checks.push_back(check);
            continue;
        }
        AudioResult audio;
        for (int attempt = 0; attempt < 2; ++attempt) {
            const TtsRequest request{e.text, e.voice_profile, attempt};
            try {
                audio = with_retry(retry, [&] { return tts.synthesize(request); });
            } catch (const Error& err) {
                throw TtsFailure("speech for shot " + std::to_string(e.shot_index) + " entry " + std::to_string(i) +
                                 " failed: " + err.what());
            }
            if (audio.duration_ms <= 0) {
                throw TtsFailure("speech for shot " + std::to_string(e.shot_index) + " entry " + std::to_string(i) +
                                 " has zero length");
            }
            check.attempts = attempt + 1;
            if (within_sync_tolerance(e.estimated_ms, audio.duration_ms, config.sync_tolerance)) {
                check.status = SyncStatus::Pass;
                break;
            }
            check.status = SyncStatus::Refit;
        }
        check.measured_ms = audio.duration_ms;
        check.audio = audio.bytes.empty() ? audio.uri : store.put(audio.bytes, audio.ext);
        if (check.audio.empty()) {
            throw TtsFailure("speech for shot " + std::to_string(e.shot_index) + " returned no audio");
        }
        checks.push_back(check);
    }
    return checks;
}

// Assembly --------------------------------------------------------------------------

void to_json(json& j, const EdlItem& i) {
    json audio = json::array();
    for (const auto& a : i.audio) {
        audio.push_back(json{{"ref", a.ref}, {"startMs", a.start_ms}, {"endMs", a.end_ms}, {"trimMs", a.trim_ms}});
    }
    j = json{{"shotIndex", i.shot_index},
             {"clipId", i.clip_id},
             {"clip", i.clip},
             {"inMs", i.in_ms},
             {"outMs", i.out_ms},
             {"audio", audio},
             {"subtitle", {{"text", i.subtitle}, {"startMs", i.subtitle_start_ms}, {"endMs", i.subtitle_end_ms}}}};
}

void from_json(const json& j, EdlItem& i) {
    i.shot_index = get_field<int>(j, "shotIndex");
    i.clip_id = get_field<std::string>(j, "clipId");
    i.clip = get_field<std::string>(j, "clip");
    i.in_ms = get_field<std::int64_t>(j, "inMs");
    i.out_ms = get_field<std::int64_t>(j, "outMs");
    i.audio.clear();
    for (const auto& a : get_array<json>(j, "audio")) {
        i.audio.push_back(AudioSegment{get_field<std::string>(a, "ref"), get_field<std::int64_t>(a, "startMs"),
                                       get_field<std::int64_t>(a, "endMs"), get_field<std::int64_t>(a, "trimMs")});
    }
    const json sub = get_field<json>(j, "subtitle");
    i.subtitle = get_field<std::string>(sub, "text", "subtitle");
    i.subtitle_start_ms = get_field<std::int64_t>(sub, "startMs", "subtitle");
    i.subtitle_end_ms = get_field<std::int64_t>(sub, "endMs", "subtitle");
}

void to_json(json& j, const EditDecisionList& e) {
    j = json{{"version", 1}, {"totalMs", e.total_ms()}, {"items", e.items}};
}

void from_json(const json& j, EditDecisionList& e) { e.items = get_array<EdlItem>(j, "items"); }

EditDecisionList assemble(const std::vector<ClipAsset>& clips, const VoiceoverScript& vo,
                          const std::vector<AudioCheck>& audio, const PostConfig& config) {
    std::map<int, const AudioCheck*> by_entry;
    for (const auto& a : audio) {
        by_entry[a.entry] = &a;
    }
    EditDecisionList edl;
    std::int64_t cursor = 0;
    for (std::size_t k = 0; k < clips.size(); ++k) {
        const ClipAsset& clip = clips[k];
        if (clip.shot_index != static_cast<int>(k + 1)) {
            throw Error("clips must cover shots 1..N in order");
        }
        EdlItem item;
        item.shot_index = clip.shot_index;
        item.clip_id = clip.id;
        item.clip = clip.uri;
        item.in_ms = cursor;
        item.out_ms = cursor + clip.duration_ms;

        std::vector<std::string> lines;
        std::int64_t at = item.in_ms;
        for (std::size_t i = 0; i < vo.entries.size(); ++i) {
            const VoiceoverEntry& e = vo.entries[i];
            if (e.shot_index != clip.shot_index || e.text.empty()) {
                continue;
            }
            lines.push_back(e.text);
            auto a = by_entry.find(static_cast<int>(i));
            if (a == by_entry.end() || a->second->audio.empty()) {
                continue;
            }
            item.audio.push_back(AudioSegment{a->second->audio, at, at + a->second->measured_ms, 0});
            at += a->second->measured_ms;
        }

        const std::int64_t overshoot = at - item.out_ms;
        if (overshoot > 0) {
            const double limit = config.max_trim * static_cast<double>(clip.duration_ms);
            if (static_cast<double>(overshoot) > limit) {
                throw UnfittableAudio("shot " + std::to_string(clip.shot_index) + ": audio runs " +
                                      std::to_string(overshoot) + " ms past a " + std::to_string(clip.duration_ms) +
                                      " ms clip");
            }
            std::int64_t left = overshoot;
            for (auto it = item.audio.rbegin(); it != item.audio.rend() && left > 0; ++it) {
                const std::int64_t cut = std::min(left, it->end_ms - it->start_ms);
                it->end_ms -= cut;
                it->trim_ms = cut;
                left -= cut;
            }
            item.audio.erase(std::remove_if(item.audio.begin(), item.audio.end(),
                                            [](const AudioSegment& s) { return s.end_ms <= s.start_ms; }),
                             item.audio.end());
        }

        for (std::size_t i = 0; i < lines.size(); ++i) {
            item.subtitle += (i == 0 ? "" : " ") + lines[i];
        }
        item.subtitle_start_ms = item.in_ms;
        if (item.audio.empty()) {
            item.subtitle_end_ms = lines.empty() ? item.in_ms : item.out_ms;
        } else {
            item.subtitle_end_ms = item.audio.back().end_ms;
        }
        cursor = item.out_ms;
        edl.items.push_back(std::move(item));
    }
    return edl;
}

namespace {

std::string timecode(std::int64_t ms) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld.%03lld", static_cast<long long>(ms / 3600000),
                  static_cast<long long>(ms / 60000 % 60), static_cast<long long>(ms / 1000 % 60),
                  static_cast<long long>(ms % 1000));
    return buf;
}

}  // namespace

std::string cue_sheet(const EditDecisionList& edl) {
    std::ostringstream out;
    out << "# edit decision list v1, " << edl.items.size() << " items, " << timecode(edl.total_ms()) << "\n";
    for (const auto& item : edl.items) {
        char num[8];
        std::snprintf(num, sizeof num, "%03d", item.shot_index);
        out << num << "  V  " << timecode(item.in_ms) << "  " << timecode(item.out_ms) << "  " << item.clip_id << "  "
            << item.clip << "\n";
        for (const auto& a : item.audio) {
            out << num << "  A  " << timecode(a.start_ms) << "  " << timecode(a.end_ms) << "  " << a.ref;
            if (a.trim_ms > 0) {
                out << "  trim=" << a.trim_ms << "ms";
            }
            out << "\n";
        }
        if (!item.subtitle.empty()) {
            out << num << "  S  " << timecode(item.subtitle_start_ms) << "  " << timecode(item.subtitle_end_ms) << "  "
                << json(item.subtitle).dump() << "\n";
        }
    }
    return out.str();
}

json render_manifest(const EditDecisionList& edl) {
    json clips = json::array();
    json audio = json::array();
    for (const auto& item : edl.items) {
        clips.push_back(item.clip);
        for (const auto& a : item.audio) {
            audio.push_back(a.ref);
        }
    }
    return json{{"version", 1},
                {"edl", "edl.json"},
                {"cueSheet", "edl.txt"},
                {"output", "render/final.mp4"},
                {"totalMs", edl.total_ms()},
                {"clips", clips},
                {"audio", audio},
                {"subtitles", "embedded-in-edl"}};
}

// Final review ------------------------------------------------------------------------

json final_report(const Script& script, const std::vector<ClipAsset>& clips, ReviewerPort& reviewer,
                  const std::string& story_text) {
    json shots = json::array();
    double total = 0.0;
    std::map<Domain, double> domains;
    for (std::size_t k = 0; k < clips.size(); ++k) {
        std::span<const ClipAsset> lineage(clips.data(), k);
        EvalContext context = assemble_context(static_cast<int>(k + 1), script, lineage, clips[k], story_text);
        if (k + 1 < clips.size()) {
            context.next_clip = clips[k + 1];
        }
        const EvalReport report = reviewer.review(context);
        total += report.total;
        for (const auto& [d, v] : report.domain_scores) {
            domains[d] += v;
        }
        shots.push_back(json{{"shotIndex", k + 1}, {"clipId", clips[k].id}, {"report", report}});
    }
    const double n = clips.empty() ? 1.0 : static_cast<double>(clips.size());
    json domain_means = json::object();
    for (const auto& [d, v] : domains) {
        domain_means[std::string(domain_name(d))] = v / n;
    }
    return json{{"version", 1}, {"shots", shots}, {"meanTotal", total / n}, {"domainMeans", domain_means}};
}

// Pipeline ------------------------------------------------------------------------------

Pipeline::Pipeline(std::filesystem::path project_dir, PipelineConfig config, Backends backends)
    : paths_{std::move(project_dir)}, config_(std::move(config)), backends_(std::move(backends)), store_(paths_.root) {
    config_.search.retry = config_.retry;
    config_.search.validate();
}

void Pipeline::init(const std::filesystem::path& project_dir, const std::string& story_text) {
    const ProjectPaths paths{project_dir};
    std::filesystem::create_directories(project_dir);
    if (std::filesystem::exists(paths.story())) {
        if (read_text_file(paths.story()) != story_text) {
            throw Error("project " + project_dir.string() + " already holds a different story");
        }
        return;
    }
    write_text_file(paths.story(), story_text);
}

PipelineState Pipeline::state() const {
    if (!std::filesystem::exists(paths_.story())) {
        throw MissingProject("no project at " + paths_.root.string() + " (story.txt missing)");
    }
    if (!std::filesystem::exists(paths_.state())) {
        return PipelineState{};
    }
    return read_json_file(paths_.state()).get<PipelineState>();
}

void Pipeline::advance(Stage done) {
    PipelineState s = state();
    if (done <= s.stage) {
        return;
    }
    s.stage = done;
    s.timestamps[to_string(done)] = utc_now();
    write_json_file(paths_.state(), s);
}

void Pipeline::require(Stage at_least) const {
    const Stage current = state().stage;
    if (current < at_least) {
        throw Error("stage " + to_string(at_least) + " has not been reached (project is at " + to_string(current) +
                    ")");
    }
}

std::string Pipeline::story_text() const { return read_text_file(paths_.story()); }

void Pipeline::run_until(Stage target) {
    using Step = void (Pipeline::*)();
    const std::pair<Stage, Step> steps[] = {{Stage::Planned, &Pipeline::run_plan},
                                            {Stage::Storyboarded, &Pipeline::run_storyboard},
                                            {Stage::Shot, &Pipeline::run_shoot},
                                            {Stage::Assembled, &Pipeline::run_assemble}};
    for (const auto& [stage, step] : steps) {
        if (stage > target) {
            break;
        }
        if (state().stage < stage) {
            (this->*step)();
        }
    }
}

void Pipeline::run_plan() {
    if (state().stage >= Stage::Planned) {
        return;
    }
    const Script script = plan(story_text(), *backends_.llm, config_.post.plan_attempts);
    write_json_file(paths_.script(), script);
    advance(Stage::Planned);
}

void Pipeline::run_storyboard() {
    if (state().stage >= Stage::Storyboarded) {
        return;
    }
    require(Stage::Planned);
    const Script script = read_json_file(paths_.script()).get<Script>();
    const Storyboard board = build_storyboard(script, *backends_.bank_images, *backends_.keyframe_images, store_,
                                              config_.retry, config_.search.max_concurrency);
    write_json_file(paths_.storyboard(), board);
    advance(Stage::Storyboarded);
}

void Pipeline::run_shoot() {
    if (state().stage >= Stage::Shot) {
        return;
    }
    require(Stage::Storyboarded);
    const Script script = read_json_file(paths_.script()).get<Script>();
    const Storyboard board = read_json_file(paths_.storyboard()).get<Storyboard>();
    const AssetResolver local = [this](const AssetRef& ref) {
        return ref.find("://") != std::string::npos || store_.exists(ref);
    };
    ValidationReport report = validate_script(script, board, local);
    if (!report.ok()) {
        throw InvalidScript(std::move(report));
    }

    SearchOptions options;
    options.story_text = story_text();
    options.checkpoint = paths_.checkpoint();
    options.on_extension = config_.on_extension;
    if (std::filesystem::exists(paths_.checkpoint())) {
        options.resume = checkpoint_from_json(read_json_file(paths_.checkpoint()));
        if (backends_.on_resume) {
            backends_.on_resume(*options.resume, script);
        }
    }
    const SearchState result =
        run_search(script, board, config_.search, *backends_.generator, *backends_.reviewer, config_.seed, options);

    write_json_file(paths_.tree(), tree_to_json(result));
    json reports = json::object();
    for (const auto& [id, r] : result.reports) {
        reports[std::to_string(id)] = r;
    }
    write_json_file(paths_.reports(), reports);
    write_json_file(paths_.final_report(),
                    final_report(script, result.tree.chosen_clips(), *backends_.reviewer, options.story_text));
    advance(Stage::Shot);
}

void Pipeline::run_assemble() {
    if (state().stage >= Stage::Assembled) {
        return;
    }
    require(Stage::Shot);
    const Script script = read_json_file(paths_.script()).get<Script>();
    const SearchState search = tree_from_json(read_json_file(paths_.tree()));
    const std::vector<ClipAsset> clips = search.tree.chosen_clips();

    const VoiceoverScript vo = plan_voiceover(script, clips, *backends_.llm, config_.post);
    write_json_file(paths_.voiceover(), vo);
    const std::vector<AudioCheck> audio = synthesize_and_check(vo, *backends_.tts, store_, config_.post, config_.retry);
    write_json_file(paths_.audio(), json{{"checks", audio}});
    const EditDecisionList edl = assemble(clips, vo, audio, config_.post);
    write_json_file(paths_.edl(), edl);
    write_text_file(paths_.cue_sheet(), cue_sheet(edl));
    write_json_file(paths_.render_manifest(), render_manifest(edl));
    advance(Stage::Assembled);
}

}  // namespace storyreel

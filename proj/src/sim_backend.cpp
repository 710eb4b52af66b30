#include "storyreel/sim_backend.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <sstream>

namespace storyreel {

namespace {

constexpr std::uint64_t kGenerationSalt = 0x67656e65ull;  // "gene"
constexpr std::uint64_t kDurationSalt = 0x64757261ull;    // "dura"
constexpr std::uint64_t kScoreSalt = 0x73636f72ull;       // "scor"

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void SimWorldConfig::validate() const {
    if (!in_unit(continuity)) {
        throw Error("continuity must lie in [0, 1]");
    }
    if (!(base_quality >= 0.0 && base_quality <= 100.0)) {
        throw Error("baseQuality must lie in [0, 100]");
    }
    if (!(process_noise >= 0.0) || !(observation_noise >= 0.0) || !(cut_penalty >= 0.0)) {
        throw Error("noise levels and cut penalty must be non-negative");
    }
}

void to_json(json& j, const SimWorldConfig& c) {
    j = json{{"continuity", c.continuity},
             {"baseQuality", c.base_quality},
             {"processNoise", c.process_noise},
             {"observationNoise", c.observation_noise},
             {"cutPenalty", c.cut_penalty}};
}

void from_json(const json& j, SimWorldConfig& c) {
    c.continuity = get_field_or(j, "continuity", c.continuity);
    c.base_quality = get_field_or(j, "baseQuality", c.base_quality);
    c.process_noise = get_field_or(j, "processNoise", c.process_noise);
    c.observation_noise = get_field_or(j, "observationNoise", c.observation_noise);
    c.cut_penalty = get_field_or(j, "cutPenalty", c.cut_penalty);
}

double sim_latent(const SimWorldConfig& config, std::optional<double> parent_latent, bool keyframe,
                  double standard_normal) {
    const double parent = parent_latent.value_or(config.base_quality);
    double latent = config.continuity * parent + (1.0 - config.continuity) * config.base_quality +
                    config.process_noise * standard_normal;
    if (keyframe) {
        latent -= config.cut_penalty;
    }
    return std::clamp(latent, 0.0, 100.0);
}

MetricScores sim_score(double latent, double observation_noise, Stream& rng) {
    MetricScores scores;
    for (Metric m : kAllMetrics) {
        const double noise = observation_noise > 0.0 ? observation_noise * rng.normal() : 0.0;
        scores[m] = std::clamp(latent + noise, 0.0, 100.0);
    }
    return scores;
}

// SimWorld ------------------------------------------------------------------

void SimWorld::record(const ClipAsset& clip, double latent) {
    std::lock_guard lock(mutex_);
    by_uri_[clip.uri] = latent;
    by_frame_[clip.last_frame] = latent;
}

std::optional<double> SimWorld::latent_of_uri(const std::string& uri) const {
    std::lock_guard lock(mutex_);
    auto it = by_uri_.find(uri);
    if (it == by_uri_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<double> SimWorld::latent_of_frame(const AssetRef& frame) const {
    std::lock_guard lock(mutex_);
    auto it = by_frame_.find(frame);
    if (it == by_frame_.end()) {
        return std::nullopt;
    }
    return it->second;
}

double SimWorld::latent(const ClipAsset& clip) const {
    auto v = latent_of_uri(clip.uri);
    if (!v) {
        throw Error("clip '" + clip.uri + "' was not produced by this simulated world");
    }
    return *v;
}

// SimGenerator --------------------------------------------------------------

ClipAsset SimGenerator::generate(const GeneratorRequest& request) {
    const bool keyframe = request.conditioning.kind == ConditioningKind::Keyframe;
    std::optional<double> parent;
    if (!keyframe) {
        parent = world_.latent_of_frame(request.conditioning.source);
        if (!parent) {
            throw ProtocolError("conditioning frame '" + request.conditioning.source + "' is unknown to the simulator");
        }
    }
    const int shot = request.shot.index;
    Stream noise(mix_key(request.seed, kGenerationSalt, shot, request.candidate_index));
    const double latent = sim_latent(world_.config(), parent, keyframe, noise.normal());

    Stream duration(mix_key(request.seed, kDurationSalt, shot, request.candidate_index));
    ClipAsset clip;
    const std::string tag = std::to_string(request.seed) + "/" + std::to_string(request.node_id);
    clip.id = "n" + std::to_string(request.node_id);
    clip.shot_index = shot;
    clip.uri = "sim://clip/" + tag;
    clip.last_frame = "sim://frame/" + tag;
    clip.duration_ms = 3000 + 500 * static_cast<std::int64_t>(duration.below(5));
    world_.record(clip, latent);
    {
        std::lock_guard lock(mutex_);
        ++calls_;
    }
    return clip;
}

// SimScorer -----------------------------------------------------------------

MetricScores SimScorer::score(const EvalContext& context) {
    const double latent = world_.latent(context.candidate_clip);
    Stream rng(mix_key(seed_, kScoreSalt, hash_text(context.candidate_clip.uri)));
    return sim_score(latent, world_.config().observation_noise, rng);
}

// Script planning -------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return s.substr(b, e - b);
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    bool in_quote = false;
    for (char c : text) {
        const char before = cur.empty() ? ' ' : cur.back();
        cur.push_back(c);
        bool closes_quoted_sentence = false;
        if (c == '"') {
            in_quote = !in_quote;
            closes_quoted_sentence = !in_quote && (before == '.' || before == '!' || before == '?');
        }
        if (closes_quoted_sentence || (!in_quote && (c == '.' || c == '!' || c == '?'))) {
            auto t = trim(cur);
            if (t.size() > 1) {
                out.push_back(t);
            }
            cur.clear();
        }
    }
    auto t = trim(cur);
    if (!t.empty()) {
        out.push_back(t);
    }
    return out;
}

std::vector<std::string> words_of(const std::string& sentence) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : sentence) {
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'') {
            cur.push_back(c);
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) {
        words.push_back(cur);
    }
    return words;
}

std::string lower(std::string s) {
    for (auto& c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

std::string without_quotes(const std::string& text) {
    std::string out;
    bool in_quote = false;
    for (char c : text) {
        if (c == '"') {
            in_quote = !in_quote;
            out.push_back(' ');
        } else if (!in_quote) {
            out.push_back(c);
        }
    }
    return out;
}

bool capitalised(const std::string& w) { return !w.empty() && std::isupper(static_cast<unsigned char>(w[0])); }

const std::set<std::string>& function_words() {
    static const std::set<std::string> words = {
        "a",    "an",    "the",   "one",  "then",  "he",    "she",   "they", "it",    "but",  "and",
        "so",   "when",  "after", "once", "later", "finally", "soon", "in",  "at",    "on",   "his",
        "her",  "their", "there", "this", "that",  "we",    "i",     "you",  "every", "suddenly",
        "next", "together", "with",  "where", "who",  "of",    "to",    "into",  "near", "inside", "by",  "from",
        "as",   "while", "all",   "some", "its",   "was",   "is",    "were", "are",   "had",  "for",
        "up",   "down",  "out",   "back", "home",  "day",   "yes",   "no",   "oh",    "hello", "thank",
        "thanks", "let", "let's", "please", "look", "come", "what", "why",  "how",   "my",   "our",
        "your", "me",    "us",    "him",  "them",  "not",   "do",    "did",  "can",   "will", "would"};
    return words;
}

const std::set<std::string>& location_preps() {
    static const std::set<std::string> preps = {"in", "at", "to", "into", "near", "inside", "through", "across"};
    return preps;
}

std::string slug(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) {
            out.push_back('-');
        }
        out += lower(p);
    }
    return out;
}

std::optional<std::string> find_location(const std::vector<std::string>& words) {
    for (std::size_t i = 0; i + 2 < words.size(); ++i) {
        if (location_preps().count(lower(words[i])) != 0 && lower(words[i + 1]) == "the") {
            std::vector<std::string> parts;
            for (std::size_t k = i + 2; k < words.size() && parts.size() < 2; ++k) {
                const std::string w = lower(words[k]);
                if (function_words().count(w) != 0) {
                    break;
                }
                parts.push_back(w);
            }
            if (!parts.empty()) {
                return slug(parts);
            }
        }
    }
    return std::nullopt;
}

}  // namespace

Script plan_script_from_text(const std::string& story) {
    const auto sentences = split_sentences(story);

    Script script;
    std::string background = "default";
    std::string previous_background;
    int index = 0;
    for (const auto& s : sentences) {
        const auto words = words_of(without_quotes(s));
        Shot shot;
        shot.index = ++index;
        shot.description = s;
        for (std::size_t i = 0; i < words.size(); ++i) {
            const std::string w = lower(words[i]);
            if (capitalised(words[i]) && function_words().count(w) == 0) {
                shot.characters.insert(w);
            }
        }
        if (auto loc = find_location(words)) {
            background = *loc;
        }
        shot.background = background;
        if (shot.index == 1 || background != previous_background) {
            script.cuts.indices.insert(shot.index);
        }
        previous_background = background;
        script.shots.push_back(std::move(shot));
    }
    return script;
}

// SimCompletion ---------------------------------------------------------------

namespace {

std::optional<std::string> quoted(const std::string& text) {
    auto open = text.find('"');
    if (open == std::string::npos) {
        return std::nullopt;
    }
    auto close = text.find('"', open + 1);
    if (close == std::string::npos || close == open + 1) {
        return std::nullopt;
    }
    return text.substr(open + 1, close - open - 1);
}

}  // namespace

std::string SimCompletion::complete(const json& request) {
    const auto task = get_field<std::string>(request, "task");
    if (task == "script") {
        const Script script = plan_script_from_text(get_field<std::string>(request, "story"));
        return json(script).dump();
    }
    if (task == "voiceover") {
        const Script script = get_field<Script>(request, "script");
        json entries = json::array();
        for (const auto& shot : script.shots) {
            json e;
            e["shotIndex"] = shot.index;
            if (auto line = quoted(shot.description); line && !shot.characters.empty()) {
                e["kind"] = "dialogue";
                e["speaker"] = *shot.characters.begin();
                e["text"] = *line;
                e["emotion"] = "warm";
            } else {
                e["kind"] = "narration";
                e["speaker"] = "narrator";
                e["text"] = shot.description;
                e["emotion"] = "calm";
            }
            entries.push_back(std::move(e));
        }
        return json{{"entries", entries}}.dump();
    }
    throw ProtocolError("simulated completion does not handle task '" + task + "'");
}

// SimImage / SimTts -----------------------------------------------------------

ImageResult SimImage::generate(const ImageRequest& request) {
    std::ostringstream out;
    out << "SIMIMG v1\nkind=" << request.kind << "\nid=" << request.id << "\nprompt=" << request.prompt << "\n";
    for (const auto& ref : request.references) {
        out << "ref=" << ref << "\n";
    }
    ImageResult result;
    result.bytes = out.str();
    result.ext = "simimg";
    return result;
}

AudioResult SimTts::synthesize(const TtsRequest& request) {
    AudioResult audio;
    audio.ext = "simwav";
    if (request.text.empty()) {
        return audio;
    }
    Stream rng(mix_key(hash_text(request.text), hash_text(request.voice_profile),
                       static_cast<std::uint64_t>(request.attempt)));
    const double factor = 1.0 + jitter_ * (2.0 * rng.uniform() - 1.0);
    const double seconds = static_cast<double>(request.text.size()) / chars_per_second_;
    audio.duration_ms = std::max<std::int64_t>(1, std::llround(seconds * 1000.0 * factor));
    std::ostringstream out;
    out << "SIMWAV v1\nvoice=" << request.voice_profile << "\nms=" << audio.duration_ms << "\ntext=" << request.text
        << "\n";
    audio.bytes = out.str();
    return audio;
}

// Random stories --------------------------------------------------------------

SimStory make_sim_story(int shots, std::uint64_t seed) {
    static const std::array<const char*, 5> kCharacters = {"ava", "ben", "cleo", "dev", "eli"};
    static const std::array<const char*, 5> kBackgrounds = {"forest", "village", "river", "castle", "meadow"};
    static const std::array<const char*, 6> kActions = {"walks", "waves", "picks up a basket", "runs", "sits down",
                                                        "looks around"};
    Stream rng(mix_key(seed, 0x73746f72ull));
    SimStory story;
    std::string background;
    for (int k = 1; k <= shots; ++k) {
        const bool cut = k == 1 || rng.below(4) == 0;
        if (cut) {
            background = kBackgrounds[rng.below(kBackgrounds.size())];
            story.script.cuts.indices.insert(k);
            story.storyboard.keyframes[k] = "sim://keyframe/" + std::to_string(k);
        }
        Shot shot;
        shot.index = k;
        shot.background = background;
        const std::string who = kCharacters[rng.below(kCharacters.size())];
        shot.characters.insert(who);
        if (rng.below(3) == 0) {
            shot.characters.insert(kCharacters[rng.below(kCharacters.size())]);
        }
        shot.description = who + " " + kActions[rng.below(kActions.size())] + " in the " + background + ".";
        for (const auto& c : shot.characters) {
            story.storyboard.character_bank[c] = "sim://character/" + c;
        }
        story.storyboard.background_bank[background] = "sim://background/" + background;
        story.script.shots.push_back(std::move(shot));
    }
    return story;
}

}  // namespace storyreel

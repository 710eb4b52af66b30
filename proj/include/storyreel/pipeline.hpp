#pragma once

#include "storyreel/assets.hpp"
#include "storyreel/eval.hpp"
#include "storyreel/ports.hpp"
#include "storyreel/search.hpp"
#include "storyreel/story.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace storyreel {

// Errors ------------------------------------------------------------------------

class PlanningFailed : public Error {
public:
    PlanningFailed(const std::string& what, ValidationReport report, int attempts)
        : Error(what), report_(std::move(report)), attempts_(attempts) {}

    const ValidationReport& report() const { return report_; }
    int attempts() const { return attempts_; }

private:
    ValidationReport report_;
    int attempts_;
};

class GenerationFailed : public Error {
public:
    GenerationFailed(std::string asset, const std::string& cause)
        : Error("generation of asset '" + asset + "' failed: " + cause), asset_(std::move(asset)) {}

    const std::string& asset() const { return asset_; }

private:
    std::string asset_;
};

class TtsFailure : public Error {
public:
    using Error::Error;
};

class UnfittableAudio : public Error {
public:
    using Error::Error;
};

class MissingProject : public Error {
public:
    using Error::Error;
};

// Stages ------------------------------------------------------------------------

enum class Stage { New, Planned, Storyboarded, Shot, Assembled };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& text);

struct PipelineState {
    Stage stage = Stage::New;
    std::map<std::string, std::string> timestamps;  // stage name -> ISO-8601 UTC
};

void to_json(json& j, const PipelineState& s);
void from_json(const json& j, PipelineState& s);

/// File layout of a project directory.
struct ProjectPaths {
    std::filesystem::path root;

    std::filesystem::path story() const { return root / "story.txt"; }
    std::filesystem::path state() const { return root / "pipeline.json"; }
    std::filesystem::path script() const { return root / "script.json"; }
    std::filesystem::path storyboard() const { return root / "storyboard.json"; }
    std::filesystem::path checkpoint() const { return root / "search.ckpt.json"; }
    std::filesystem::path tree() const { return root / "tree.json"; }
    std::filesystem::path reports() const { return root / "reports.json"; }
    std::filesystem::path final_report() const { return root / "final-report.json"; }
    std::filesystem::path voiceover() const { return root / "voiceover.json"; }
    std::filesystem::path audio() const { return root / "audio.json"; }
    std::filesystem::path edl() const { return root / "edl.json"; }
    std::filesystem::path cue_sheet() const { return root / "edl.txt"; }
    std::filesystem::path render_manifest() const { return root / "render-manifest.json"; }
};

// Planning and storyboard -------------------------------------------------------

/// Asks the completion port for a script, feeding validation violations back
/// on each retry. `attempts_used` receives the number of requests made.
Script plan(const std::string& story_text, CompletionPort& llm, int max_attempts = 3, int* attempts_used = nullptr);

/// Bank image per distinct character and background, plus a keyframe per cut
/// shot composed from that shot's bank references and description. Requests
/// within each group may run concurrently; results are committed in a fixed
/// order.
Storyboard build_storyboard(const Script& script, ImagePort& bank_images, ImagePort& keyframe_images,
                            AssetStore& store, const RetryPolicy& retry = {}, int max_concurrency = 1);

// Post-production -----------------------------------------------------------------

enum class LineKind { Narration, Dialogue };

struct VoiceoverEntry {
    int shot_index = 0;
    LineKind kind = LineKind::Narration;
    std::string speaker = "narrator";
    std::string text;
    std::string emotion;
    std::string voice_profile;
    /// Zero only for silent entries (empty text).
    std::int64_t estimated_ms = 0;
    /// Estimate exceeds the shot's clip duration.
    bool oversize = false;
};

struct VoiceoverScript {
    std::vector<VoiceoverEntry> entries;
};

void to_json(json& j, const VoiceoverEntry& e);
void from_json(const json& j, VoiceoverEntry& e);
void to_json(json& j, const VoiceoverScript& v);
void from_json(const json& j, VoiceoverScript& v);

struct CharacterTraits {
    std::string age = "adult";  // child | teen | adult | elder
    std::string gender = "unspecified";
};

/// Voice selection by (age bracket, gender); editable config.
struct VoiceTable {
    std::map<std::string, CharacterTraits> characters;
    std::map<std::string, std::string> profiles;  // "<age>/<gender>" -> profile
    std::string narrator = "narrator-neutral";
    std::string fallback = "adult-neutral";

    static VoiceTable defaults();
    std::string profile_for(const std::string& speaker) const;
};

void to_json(json& j, const VoiceTable& t);
void from_json(const json& j, VoiceTable& t);

struct PostConfig {
    double chars_per_second = 14.0;
    double sync_tolerance = 0.20;  // accepted relative deviation of measured vs estimated duration
    double max_trim = 0.10;        // overshoot trimmable as trailing silence, relative to the clip
    int plan_attempts = 3;
    VoiceTable voices = VoiceTable::defaults();
};

void to_json(json& j, const PostConfig& c);
void from_json(const json& j, PostConfig& c);

std::int64_t estimate_speech_ms(const std::string& text, double chars_per_second);

VoiceoverScript plan_voiceover(const Script& script, const std::vector<ClipAsset>& clips, CompletionPort& llm,
                               const PostConfig& config = {}, int* attempts_used = nullptr);

enum class SyncStatus { Pass, Refit, Silent };

struct AudioCheck {
    int entry = 0;  // index into the voiceover entries
    int shot_index = 0;
    AssetRef audio;
    std::int64_t estimated_ms = 0;
    std::int64_t measured_ms = 0;
    int attempts = 0;
    SyncStatus status = SyncStatus::Pass;
};

void to_json(json& j, const AudioCheck& c);
void from_json(const json& j, AudioCheck& c);

/// |measured - estimated| <= tolerance * estimated.
bool within_sync_tolerance(std::int64_t estimated_ms, std::int64_t measured_ms, double tolerance);

std::vector<AudioCheck> synthesize_and_check(const VoiceoverScript& vo, TtsPort& tts, AssetStore& store,
                                             const PostConfig& config = {}, const RetryPolicy& retry = {});

struct AudioSegment {
    AssetRef ref;
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    std::int64_t trim_ms = 0;  // trailing audio dropped to fit the clip
};

struct EdlItem {
    int shot_index = 0;
    std::string clip_id;
    AssetRef clip;
    std::int64_t in_ms = 0;
    std::int64_t out_ms = 0;
    std::vector<AudioSegment> audio;  // empty for subtitle-only items
    std::string subtitle;
    std::int64_t subtitle_start_ms = 0;
    std::int64_t subtitle_end_ms = 0;
};

struct EditDecisionList {
    std::vector<EdlItem> items;
    std::int64_t total_ms() const { return items.empty() ? 0 : items.back().out_ms; }
};

void to_json(json& j, const EdlItem& i);
void from_json(const json& j, EdlItem& i);
void to_json(json& j, const EditDecisionList& e);
void from_json(const json& j, EditDecisionList& e);

EditDecisionList assemble(const std::vector<ClipAsset>& clips, const VoiceoverScript& vo,
                          const std::vector<AudioCheck>& audio, const PostConfig& config = {});

/// Plain-text cue sheet, one line per clip and per audio segment.
std::string cue_sheet(const EditDecisionList& edl);
json render_manifest(const EditDecisionList& edl);

// Whole-path review ---------------------------------------------------------------

/// Re-evaluates the finished chosen path with post-hoc context (the following
/// chosen clip is visible).
json final_report(const Script& script, const std::vector<ClipAsset>& clips, ReviewerPort& reviewer,
                  const std::string& story_text);

// Orchestration ---------------------------------------------------------------------

struct Backends {
    CompletionPort* llm = nullptr;
    ImagePort* bank_images = nullptr;
    ImagePort* keyframe_images = nullptr;
    GeneratorPort* generator = nullptr;
    ReviewerPort* reviewer = nullptr;
    TtsPort* tts = nullptr;
    /// Called before the search resumes from a checkpoint, so stateful
    /// backends can rebuild what the saved tree refers to.
    std::function<void(const SearchState&, const Script&)> on_resume;
};

struct PipelineConfig {
    SearchParams search;
    std::uint64_t seed = 0;
    PostConfig post;
    RetryPolicy retry;
    /// Hook after every chosen-path extension (tests use it to interrupt).
    std::function<void(const ClipSearch&, NodeId)> on_extension;
};

class Pipeline {
public:
    Pipeline(std::filesystem::path project_dir, PipelineConfig config, Backends backends);

    /// Creates the project directory with `story.txt` unless it already holds one.
    static void init(const std::filesystem::path& project_dir, const std::string& story_text);

    PipelineState state() const;
    /// Runs every stage after the current one up to and including `target`.
    /// Completed stages are skipped.
    void run_until(Stage target);

    void run_plan();
    void run_storyboard();
    void run_shoot();
    void run_assemble();

    const ProjectPaths& paths() const { return paths_; }

private:
    void advance(Stage done);
    void require(Stage at_least) const;
    std::string story_text() const;

    ProjectPaths paths_;
    PipelineConfig config_;
    Backends backends_;
    AssetStore store_;
};

}  // namespace storyreel

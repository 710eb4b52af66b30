#include "storyreel/cli.hpp"
#include "storyreel/pipeline.hpp"

#include "support.hpp"

#include <doctest.h>

#include <deque>

using namespace storyreel;
using namespace storyreel::test;
namespace fs = std::filesystem;

namespace {

/// Replies with queued texts and remembers every request.
class ScriptedCompletion : public CompletionPort {
public:
    explicit ScriptedCompletion(std::deque<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const json& request) override {
        requests.push_back(request);
        REQUIRE_FALSE(replies_.empty());
        std::string r = replies_.front();
        replies_.pop_front();
        return r;
    }
    std::vector<json> requests;

private:
    std::deque<std::string> replies_;
};

class CountingImage : public ImagePort {
public:
    ImageResult generate(const ImageRequest& request) override {
        std::lock_guard<std::mutex> lock(mutex_);
        requests.push_back(request);
        return inner_.generate(request);
    }
    std::vector<ImageRequest> requests;

private:
    SimImage inner_;
    std::mutex mutex_;
};

/// Returns the queued durations in order.
class FixedTts : public TtsPort {
public:
    explicit FixedTts(std::deque<std::int64_t> durations) : durations_(std::move(durations)) {}
    AudioResult synthesize(const TtsRequest& request) override {
        requests.push_back(request);
        AudioResult r;
        r.bytes = "audio:" + request.text + ":" + std::to_string(request.attempt);
        r.duration_ms = durations_.front();
        if (durations_.size() > 1) {
            durations_.pop_front();
        }
        return r;
    }
    std::vector<TtsRequest> requests;

private:
    std::deque<std::int64_t> durations_;
};

Shot make_shot(int index, std::set<std::string> characters, std::string background) {
    Shot s;
    s.index = index;
    s.description = "shot " + std::to_string(index);
    s.characters = std::move(characters);
    s.background = std::move(background);
    return s;
}

Script five_shots() {
    Script s;
    s.shots = {make_shot(1, {"Ada"}, "attic"), make_shot(2, {"Ada", "Ben"}, "attic"), make_shot(3, {"Ben"}, "attic"),
               make_shot(4, {"Ben"}, "garden"), make_shot(5, {"Ada"}, "garden")};
    s.cuts.indices = {1, 4};
    return s;
}

std::vector<ClipAsset> clips_of(std::initializer_list<std::int64_t> durations) {
    std::vector<ClipAsset> out;
    int k = 1;
    for (auto d : durations) {
        out.push_back(ClipAsset{"c" + std::to_string(k), k, "sim://clip/" + std::to_string(k),
                                "sim://frame/" + std::to_string(k), d});
        ++k;
    }
    return out;
}

VoiceoverEntry line(int shot, std::string text, std::int64_t estimated) {
    VoiceoverEntry e;
    e.shot_index = shot;
    e.text = std::move(text);
    e.estimated_ms = estimated;
    return e;
}

AudioCheck heard(int entry, int shot, std::int64_t ms) {
    AudioCheck a;
    a.entry = entry;
    a.shot_index = shot;
    a.audio = "assets/a" + std::to_string(entry) + ".wav";
    a.measured_ms = ms;
    a.attempts = 1;
    return a;
}

std::map<std::string, std::string> snapshot(const fs::path& dir, bool with_state = false) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const std::string rel = fs::relative(e.path(), dir).string();
        if (e.is_regular_file() && (with_state || rel != "pipeline.json")) {
            out[rel] = read_text_file(e.path());
        }
    }
    return out;
}

const char* kStory = "Ada finds a map in the attic. Ben reads it aloud. They dig in the garden at dusk. "
                     "Ada says \"There it is.\" Ben lifts the box.";

PipelineConfig sim_config(int w1 = 2, int w2 = 2) {
    PipelineConfig pc;
    pc.search = params(w1, w2);
    pc.seed = 11;
    pc.retry.base_backoff = std::chrono::milliseconds(0);
    return pc;
}

/// Runs a fresh sim project to `target` with its own backends.
void run_sim(const fs::path& dir, Stage target, PipelineConfig pc = sim_config()) {
    Pipeline::init(dir, kStory);
    BackendSet set(RunConfig{}, dir);
    Pipeline(dir, pc, set.ports()).run_until(target);
}

}  // namespace

TEST_CASE("planning repairs an invalid script using the violations") {
    Script bad = five_shots();
    bad.cuts.indices = {4};
    ScriptedCompletion llm({json(bad).dump(), json(five_shots()).dump()});
    int attempts = 0;
    const Script s = plan("a story", llm, 3, &attempts);
    CHECK(attempts == 2);
    CHECK(s == five_shots());
    REQUIRE(llm.requests.size() == 2);
    CHECK_FALSE(llm.requests[0].contains("feedback"));
    const json fb = llm.requests[1].at("feedback").at("violations");
    REQUIRE(fb.size() == 1);
    CHECK(fb[0].at("rule") == rules::kFirstShotKeyframe);
}

TEST_CASE("planning gives up after three invalid scripts") {
    Script bad = five_shots();
    bad.shots[2].description.clear();
    ScriptedCompletion llm({json(bad).dump(), "not json", json(bad).dump()});
    try {
        plan("a story", llm, 3);
        FAIL("expected PlanningFailed");
    } catch (const PlanningFailed& e) {
        CHECK(e.attempts() == 3);
        CHECK(e.report().has_rule(rules::kEmptyDescription));
        CHECK(std::string(e.what()).find("empty-description") != std::string::npos);
    }
    CHECK(llm.requests[2].at("feedback").at("error") == "response is not JSON");
}

TEST_CASE("planning rejects an empty story") {
    ScriptedCompletion llm({});
    CHECK_THROWS_AS(plan("  \n", llm), Error);
}

TEST_CASE("storyboard issues one bank request per entity and one keyframe per cut") {
    TempDir dir("board");
    AssetStore store(dir.path());
    CountingImage bank;
    CountingImage keys;
    const Script script = five_shots();
    const Storyboard board = build_storyboard(script, bank, keys, store);

    CHECK(bank.requests.size() == 4);
    CHECK(keys.requests.size() == 2);
    CHECK(board.character_bank.size() == 2);
    CHECK(board.background_bank.size() == 2);
    CHECK(board.keyframes.size() == 2);
    CHECK(validate_script(script, board, store.resolver()).ok());

    REQUIRE(keys.requests[0].id == "shot-1");
    CHECK(keys.requests[0].references ==
          std::vector<AssetRef>{board.character_bank.at("Ada"), board.background_bank.at("attic")});
    REQUIRE(keys.requests[1].id == "shot-4");
    CHECK(keys.requests[1].references ==
          std::vector<AssetRef>{board.character_bank.at("Ben"), board.background_bank.at("garden")});
    CHECK(keys.requests[1].prompt == "shot 4");

    TempDir dir2("board-par");
    AssetStore store2(dir2.path());
    CountingImage bank2;
    CountingImage keys2;
    CHECK(build_storyboard(script, bank2, keys2, store2, {}, 4) == board);
}

TEST_CASE("storyboard failures name the asset") {
    class Broken : public ImagePort {
    public:
        ImageResult generate(const ImageRequest&) override { throw ServiceError(500, "out of credits"); }
    };
    TempDir dir("board-fail");
    AssetStore store(dir.path());
    Broken broken;
    CountingImage keys;
    RetryPolicy once{1, std::chrono::milliseconds(0)};
    try {
        build_storyboard(five_shots(), broken, keys, store, once);
        FAIL("expected GenerationFailed");
    } catch (const GenerationFailed& e) {
        CHECK(e.asset() == "character:Ada");
    }
}

TEST_CASE("voiceover covers every shot and flags oversize lines") {
    Script script = five_shots();
    script.shots.resize(3);
    script.cuts.indices = {1};
    const std::string long_text(100, 'x');
    const json reply{{"entries",
                      {{{"shotIndex", 3}, {"kind", "dialogue"}, {"speaker", "Ben"}, {"text", long_text}},
                       {{"shotIndex", 1}, {"text", "It begins."}}}}};
    ScriptedCompletion llm({reply.dump()});
    const VoiceoverScript vo = plan_voiceover(script, clips_of({4000, 4000, 4000}), llm);
    REQUIRE(vo.entries.size() == 3);
    CHECK(vo.entries[0].shot_index == 1);
    CHECK(vo.entries[0].estimated_ms == estimate_speech_ms("It begins.", 14.0));
    CHECK(vo.entries[0].voice_profile == VoiceTable::defaults().narrator);
    CHECK_FALSE(vo.entries[0].oversize);
    CHECK(vo.entries[1].shot_index == 2);
    CHECK(vo.entries[1].text.empty());
    CHECK(vo.entries[1].estimated_ms == 0);
    CHECK(vo.entries[2].estimated_ms == 7143);
    CHECK(vo.entries[2].oversize);
}

TEST_CASE("voiceover planning retries entries for unknown shots") {
    Script script = five_shots();
    const json bad{{"entries", {{{"shotIndex", 9}, {"text", "?"}}}}};
    const json good{{"entries", json::array()}};
    ScriptedCompletion llm({bad.dump(), good.dump()});
    int attempts = 0;
    const VoiceoverScript vo = plan_voiceover(script, clips_of({1, 1, 1, 1, 1}), llm, {}, &attempts);
    CHECK(attempts == 2);
    CHECK(vo.entries.size() == 5);
    CHECK(llm.requests[1].at("feedback").at("error").get<std::string>().find("shotIndex 9") != std::string::npos);
}

TEST_CASE("speech estimate") {
    CHECK(estimate_speech_ms("", 14.0) == 0);
    CHECK(estimate_speech_ms(std::string(42, 'a'), 14.0) == 3000);
    CHECK(estimate_speech_ms("a", 14.0) == 71);
}

TEST_CASE("sync check within tolerance, refit and zero length") {
    TempDir dir("sync");
    AssetStore store(dir.path());
    VoiceoverScript vo;
    vo.entries = {line(1, "hello there", 3000)};
    RetryPolicy once{1, std::chrono::milliseconds(0)};

    SUBCASE("3100 against 3000 passes") {
        FixedTts tts({3100});
        const auto checks = synthesize_and_check(vo, tts, store, {}, once);
        REQUIRE(checks.size() == 1);
        CHECK(checks[0].status == SyncStatus::Pass);
        CHECK(checks[0].attempts == 1);
        CHECK(store.exists(checks[0].audio));
    }
    SUBCASE("4500 triggers one re-synthesis that passes") {
        FixedTts tts({4500, 3200});
        const auto checks = synthesize_and_check(vo, tts, store, {}, once);
        CHECK(checks[0].status == SyncStatus::Pass);
        CHECK(checks[0].attempts == 2);
        CHECK(checks[0].measured_ms == 3200);
        REQUIRE(tts.requests.size() == 2);
        CHECK(tts.requests[1].attempt == 1);
    }
    SUBCASE("still out of tolerance is kept as refit") {
        FixedTts tts({4500, 4400});
        const auto checks = synthesize_and_check(vo, tts, store, {}, once);
        CHECK(checks[0].status == SyncStatus::Refit);
        CHECK(checks[0].measured_ms == 4400);
        CHECK(tts.requests.size() == 2);
    }
    SUBCASE("zero length") {
        FixedTts tts({0});
        CHECK_THROWS_AS(synthesize_and_check(vo, tts, store, {}, once), TtsFailure);
    }
    SUBCASE("silent entries skip synthesis") {
        vo.entries.push_back(line(2, "", 0));
        FixedTts tts({3000});
        const auto checks = synthesize_and_check(vo, tts, store, {}, once);
        REQUIRE(checks.size() == 2);
        CHECK(checks[1].status == SyncStatus::Silent);
        CHECK(tts.requests.size() == 1);
    }
}

TEST_CASE("within_sync_tolerance boundaries") {
    CHECK(within_sync_tolerance(1000, 1200, 0.2));
    CHECK(within_sync_tolerance(1000, 800, 0.2));
    CHECK_FALSE(within_sync_tolerance(1000, 1201, 0.2));
    CHECK_FALSE(within_sync_tolerance(1000, 799, 0.2));
}

TEST_CASE("assembly places audio, trims small overshoot and rejects large overshoot") {
    const auto clips = clips_of({4000, 5000, 3000});
    VoiceoverScript vo;
    vo.entries = {line(1, "one", 0), line(1, "two", 0), line(2, "three", 0), line(3, "", 0)};

    SUBCASE("fits with trim") {
        const std::vector<AudioCheck> audio{heard(0, 1, 2000), heard(1, 1, 2300), heard(2, 2, 1000)};
        const EditDecisionList edl = assemble(clips, vo, audio);
        REQUIRE(edl.items.size() == 3);
        const auto& first = edl.items[0];
        REQUIRE(first.audio.size() == 2);
        CHECK(first.audio[0].start_ms == 0);
        CHECK(first.audio[0].end_ms == 2000);
        CHECK(first.audio[1].start_ms == 2000);
        CHECK(first.audio[1].end_ms == 4000);
        CHECK(first.audio[1].trim_ms == 300);
        CHECK(first.subtitle == "one two");
        CHECK(first.subtitle_end_ms == 4000);

        CHECK(edl.items[1].in_ms == 4000);
        CHECK(edl.items[1].audio[0].start_ms == 4000);
        CHECK(edl.items[1].subtitle_end_ms == 5000);
        CHECK(edl.items[2].audio.empty());
        CHECK(edl.items[2].subtitle.empty());
        CHECK(edl.total_ms() == 12000);
        for (std::size_t i = 0; i < edl.items.size(); ++i) {
            CHECK(edl.items[i].out_ms - edl.items[i].in_ms == clips[i].duration_ms);
            if (i > 0) {
                CHECK(edl.items[i].in_ms == edl.items[i - 1].out_ms);
            }
        }

        const std::string cues = cue_sheet(edl);
        CHECK(cues.rfind("# edit decision list v1, 3 items, 00:00:12.000\n", 0) == 0);
        CHECK(cues.find("001  A  00:00:02.000  00:00:04.000  assets/a1.wav  trim=300ms") != std::string::npos);
        CHECK(cues.find("002  V  00:00:04.000  00:00:09.000  c2") != std::string::npos);
        const json manifest = render_manifest(edl);
        CHECK(manifest.at("totalMs") == 12000);
        CHECK(manifest.at("audio").size() == 3);
        CHECK(json(edl).get<EditDecisionList>().items.size() == 3);
    }
    SUBCASE("overshoot beyond ten percent") {
        const std::vector<AudioCheck> audio{heard(0, 1, 2000), heard(1, 1, 2401)};
        CHECK_THROWS_AS(assemble(clips, vo, audio), UnfittableAudio);
    }
    SUBCASE("exactly ten percent still fits") {
        const std::vector<AudioCheck> audio{heard(0, 1, 2000), heard(1, 1, 2400)};
        CHECK(assemble(clips, vo, audio).items[0].audio[1].trim_ms == 400);
    }
    SUBCASE("subtitle-only item uses the clip window") {
        const EditDecisionList edl = assemble(clips, vo, {});
        CHECK(edl.items[1].audio.empty());
        CHECK(edl.items[1].subtitle == "three");
        CHECK(edl.items[1].subtitle_start_ms == 4000);
        CHECK(edl.items[1].subtitle_end_ms == 9000);
    }
    SUBCASE("clips out of order") {
        auto shuffled = clips;
        std::swap(shuffled[0], shuffled[1]);
        CHECK_THROWS(assemble(shuffled, vo, {}));
    }
}

TEST_CASE("voice table picks profiles by age and gender") {
    VoiceTable t = VoiceTable::defaults();
    t.characters["Ada"] = CharacterTraits{"child", "female"};
    t.characters["Zed"] = CharacterTraits{"alien", "none"};
    CHECK(t.profile_for("narrator") == t.narrator);
    CHECK(t.profile_for("Ada") == t.profiles.at("child/female"));
    CHECK(t.profile_for("Zed") == t.fallback);
    CHECK(json(t).get<VoiceTable>().profile_for("Ada") == t.profile_for("Ada"));
}

TEST_CASE("pipeline stages run in order and are idempotent") {
    TempDir dir("pipe");
    const fs::path project = dir / "p";
    CHECK_THROWS_AS(Pipeline(project, sim_config(), Backends{}).state(), MissingProject);

    run_sim(project, Stage::Assembled);
    BackendSet set(RunConfig{}, project);
    Pipeline pipeline(project, sim_config(), set.ports());
    CHECK(pipeline.state().stage == Stage::Assembled);
    CHECK(pipeline.state().timestamps.size() == 4);
    for (const char* f : {"script.json", "storyboard.json", "tree.json", "reports.json", "final-report.json",
                          "voiceover.json", "audio.json", "edl.json", "edl.txt", "render-manifest.json"}) {
        CHECK_MESSAGE(fs::exists(project / f), f);
    }

    const auto before = snapshot(project, true);
    pipeline.run_until(Stage::Assembled);
    pipeline.run_plan();
    pipeline.run_shoot();
    CHECK(snapshot(project, true) == before);

    const json report = read_json_file(project / "final-report.json");
    const auto& shots = report.at("shots");
    for (std::size_t k = 0; k < shots.size(); ++k) {
        const json& next = shots[k].at("report").at("contextUsed").at("nextClip");
        CHECK(next.is_null() == (k + 1 == shots.size()));
    }
}

TEST_CASE("stages refuse to skip ahead") {
    TempDir dir("pipe-order");
    Pipeline::init(dir.path(), kStory);
    BackendSet set(RunConfig{}, dir.path());
    Pipeline pipeline(dir.path(), sim_config(), set.ports());
    CHECK_THROWS_AS(pipeline.run_shoot(), Error);
    CHECK_THROWS_AS(pipeline.run_assemble(), Error);
    CHECK(pipeline.state().stage == Stage::New);
    CHECK_THROWS(Pipeline::init(dir.path(), "a different story"));
}

TEST_CASE("resuming after any stage reproduces the uninterrupted run") {
    TempDir dir("pipe-resume");
    run_sim(dir / "ref", Stage::Assembled);
    const auto reference = snapshot(dir / "ref");
    for (Stage stop : {Stage::Planned, Stage::Storyboarded, Stage::Shot}) {
        const fs::path project = dir / ("stop-" + to_string(stop));
        run_sim(project, stop);
        CHECK(read_json_file(project / "pipeline.json").get<PipelineState>().stage == stop);
        run_sim(project, Stage::Assembled);
        CHECK_MESSAGE(snapshot(project) == reference, to_string(stop));
    }
}

TEST_CASE("a search killed mid-way resumes from its checkpoint") {
    TempDir dir("pipe-kill");
    run_sim(dir / "ref", Stage::Assembled);
    const auto reference = snapshot(dir / "ref");

    const fs::path project = dir / "killed";
    PipelineConfig pc = sim_config();
    int extensions = 0;
    pc.on_extension = [&](const ClipSearch&, NodeId) {
        if (++extensions == 2) {
            throw std::runtime_error("killed");
        }
    };
    CHECK_THROWS_AS(run_sim(project, Stage::Assembled, pc), std::runtime_error);
    CHECK(fs::exists(project / "search.ckpt.json"));
    CHECK_FALSE(fs::exists(project / "tree.json"));
    run_sim(project, Stage::Assembled);
    CHECK(snapshot(project) == reference);
}

TEST_CASE("a failing generator aborts with a checkpoint that resumes cleanly") {
    class Dying : public GeneratorPort {
    public:
        Dying(GeneratorPort& inner, int budget) : inner_(inner), budget_(budget) {}
        ClipAsset generate(const GeneratorRequest& r) override {
            if (budget_-- <= 0) {
                throw ServiceError(503, "generator down");
            }
            return inner_.generate(r);
        }

    private:
        GeneratorPort& inner_;
        int budget_;
    };

    TempDir dir("pipe-abort");
    run_sim(dir / "ref", Stage::Assembled);
    const fs::path project = dir / "p";
    run_sim(project, Stage::Storyboarded);
    {
        BackendSet set(RunConfig{}, project);
        Backends b = set.ports();
        Dying dying(*b.generator, 7);
        b.generator = &dying;
        PipelineConfig pc = sim_config();
        pc.retry.attempts = 1;
        CHECK_THROWS_AS(Pipeline(project, pc, b).run_until(Stage::Assembled), SearchAborted);
    }
    CHECK(read_json_file(project / "pipeline.json").get<PipelineState>().stage == Stage::Storyboarded);
    run_sim(project, Stage::Assembled);
    CHECK(snapshot(project) == snapshot(dir / "ref"));
}

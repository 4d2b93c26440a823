#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uavdet/geometry.hpp"
#include "uavdet/ingest.hpp"
#include "uavdet/metrics.hpp"
#include "uavdet/postprocess.hpp"

namespace uavdet {

struct DetectRequest {
    std::string image_ref;             // image id or path, as the backend knows it
    std::optional<CropWindow> window;  // nullopt: whole image
    int target_w = 640;                // window content is resized to target_w x target_h
    int target_h = 640;
    double conf_floor = 0.0;
};

void validate(const DetectRequest& r);

// Wire form: {"image_path", "window": [x0,y0,x1,y1] | null, "target_size": [w,h], "conf_floor"}.
nlohmann::json request_to_json(const DetectRequest& r);

// Returned boxes are window-local, in the target_w x target_h frame, with
// score >= conf_floor. image_id is set to the request's image_ref.
class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual std::vector<Detection> detect(const DetectRequest& req) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Fixture replay

// Windows are quantized to an 8-pixel grid: "ref|whole|640x640" or "ref|x0,y0,x1,y1|640x640"
// with coordinates divided by 8 and rounded.
std::string fixture_key(const DetectRequest& req);

class FixtureBackend : public DetectorBackend {
public:
    FixtureBackend() = default;
    explicit FixtureBackend(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    void add(const DetectRequest& req, std::vector<Detection> dets);
    std::size_t size() const;

    // Stored list for the request's key, filtered by conf_floor. Missing key: BackendError.
    std::vector<Detection> detect(const DetectRequest& req) override;
    std::string name() const override { return "fixture"; }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<Detection>> table_;
};

// Forwards to another backend and stores every response in a FixtureBackend.
class RecordingBackend : public DetectorBackend {
public:
    explicit RecordingBackend(DetectorBackend& inner) : inner_(inner) {}
    std::vector<Detection> detect(const DetectRequest& req) override;
    std::string name() const override { return "recording(" + inner_.name() + ")"; }
    FixtureBackend& recorded() { return recorded_; }

private:
    DetectorBackend& inner_;
    FixtureBackend recorded_;
};

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneObject {
    Box box;
    int class_id = 0;
};

struct SceneImage {
    int width = 0;
    int height = 0;
    std::vector<SceneObject> objects;
};

struct SyntheticParams {
    double base_conf = 0.1;
    double area_gain = 17.7;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    double min_visibility = 0.5;  // visible fraction needed inside the window
    double loc_error_px = 0.0;    // every returned box grows by this much per side, in target pixels
};

void validate(const SyntheticParams& p);
nlohmann::json to_json(const SyntheticParams& p);
SyntheticParams synthetic_params_from_json(const nlohmann::json& j, SyntheticParams base = {});

struct SyntheticSceneModel {
    std::map<std::string, SceneImage> images;  // keyed by image_ref
    SyntheticParams params;
};

// Scene per manifest entry from its labels, reachable by image id and by image path.
SyntheticSceneModel scene_from_manifest(const DatasetManifest& m, const SyntheticParams& params);

// clamp(base + gain * sqrt(apparent area) / target diagonal + noise, 0.01, 0.99).
// Apparent area is the object's visible part measured in target pixels. Noise
// is seeded by (image_ref, object index, window on an 8-pixel grid).
double synth_confidence(const Box& obj, const CropWindow& window, int target_w, int target_h,
                        const SyntheticParams& params, const std::string& image_ref = {}, std::size_t object_index = 0);

class SyntheticBackend : public DetectorBackend {
public:
    explicit SyntheticBackend(SyntheticSceneModel model);
    std::vector<Detection> detect(const DetectRequest& req) override;
    std::string name() const override { return "synthetic"; }
    const SyntheticSceneModel& model() const { return model_; }

private:
    SyntheticSceneModel model_;
};

// ---------------------------------------------------------------------------
// External HTTP backend

struct ExternalOptions {
    std::string url;  // scheme://host:port
    std::chrono::milliseconds timeout{10000};
    int retries = 2;
    std::chrono::milliseconds backoff{200};  // doubled per attempt, jittered by +-50%
    std::size_t connections = 1;
};

// Parses {"detections": [{"bbox_xyxy", "score", "class_id"}]}. Boxes are clipped
// to the target frame and those with no area inside it dropped; in strict mode
// an out-of-frame box is an error instead. Any other deviation throws BackendError.
std::vector<Detection> parse_detect_response(const std::string& body, const DetectRequest& req, bool strict = false);

// Inverse of request_to_json. The wire window carries no image size, so the
// parsed CropWindow uses (x1, y1) as a stand-in; backends use their own image size.
DetectRequest request_from_json(const nlohmann::json& j);

class ExternalBackend : public DetectorBackend {
public:
    explicit ExternalBackend(ExternalOptions opts);
    ~ExternalBackend() override;
    std::vector<Detection> detect(const DetectRequest& req) override;
    std::string name() const override { return "external(" + opts_.url + ")"; }

private:
    struct Connection;
    ExternalOptions opts_;
    std::vector<std::unique_ptr<Connection>> pool_;
    std::atomic<std::size_t> next_{0};
};

// ---------------------------------------------------------------------------
// Conformance

struct ConformanceCase {
    DetectRequest request;
    std::optional<std::vector<Detection>> expected;  // exact comparison when present
};

// The scene the canned requests refer to: image "conformance/scene_0.png",
// 1280x1024, a handful of objects of assorted sizes.
SyntheticSceneModel conformance_scene();

// Five requests against the conformance scene: whole image, interior crop,
// border crop, non-square target, high confidence floor. With expected=true
// each case carries the synthetic backend's answer for exact comparison.
std::vector<ConformanceCase> canned_conformance_cases(bool expected = false);

struct ConformanceResult {
    std::string label;
    bool passed = false;
    std::string detail;
};

// Posts every case twice to the server: responses must be 200, satisfy the
// schema, lie in the target frame, respect conf_floor, repeat identically, and
// match `expected` if given.
std::vector<ConformanceResult> run_conformance(const ExternalOptions& server, const std::vector<ConformanceCase>& cases);

// Serves a backend over the wire protocol. Used for tests and local demos.
class DetectorServer {
public:
    explicit DetectorServer(DetectorBackend& backend);
    ~DetectorServer();
    DetectorServer(const DetectorServer&) = delete;
    DetectorServer& operator=(const DetectorServer&) = delete;

    // Binds to host:port (port 0 picks a free one) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Blocks serving on the calling thread.
    void listen(const std::string& host, int port);
    void stop();

    // Fault injection: the next n requests answer 503.
    void fail_next(int n);
    std::size_t requests_served() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace uavdet

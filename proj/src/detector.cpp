#include "uavdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "uavdet/error.hpp"

namespace uavdet {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

int grid8(int v) { return static_cast<int>(std::lround(v / 8.0)); }

std::string window_key(const std::optional<CropWindow>& w) {
    if (!w) return "whole";
    return std::to_string(grid8(w->x0())) + "," + std::to_string(grid8(w->y0())) + "," +
           std::to_string(grid8(w->x1())) + "," + std::to_string(grid8(w->y1()));
}

json detection_wire(const Detection& d) {
    return {{"bbox_xyxy", {d.box.x0(), d.box.y0(), d.box.x1(), d.box.y1()}},
            {"score", d.score},
            {"class_id", d.class_id}};
}

json detections_wire(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) arr.push_back(detection_wire(d));
    return {{"detections", std::move(arr)}};
}

}  // namespace

void validate(const DetectRequest& r) {
    if (r.image_ref.empty()) throw ValidationError("detect request: image_ref is empty");
    if (r.target_w < 1 || r.target_h < 1) throw ValidationError("detect request: target size must be positive");
    if (!(r.conf_floor >= 0.0 && r.conf_floor <= 1.0))
        throw ValidationError("detect request: conf_floor must lie in [0, 1]");
}

json request_to_json(const DetectRequest& r) {
    json j;
    j["image_path"] = r.image_ref;
    j["window"] = r.window ? json{r.window->x0(), r.window->y0(), r.window->x1(), r.window->y1()} : json(nullptr);
    j["target_size"] = {r.target_w, r.target_h};
    j["conf_floor"] = r.conf_floor;
    return j;
}

DetectRequest request_from_json(const json& j) {
    try {
        DetectRequest r;
        r.image_ref = j.at("image_path").get<std::string>();
        const auto& w = j.at("window");
        if (!w.is_null()) {
            if (!w.is_array() || w.size() != 4) throw ValidationError("window must be [x0, y0, x1, y1] or null");
            for (const auto& v : w)
                if (!v.is_number_integer()) throw ValidationError("window coordinates must be integers");
            const int x1 = w[2].get<int>(), y1 = w[3].get<int>();
            r.window = CropWindow(w[0].get<int>(), w[1].get<int>(), x1, y1, x1, y1);
        }
        const auto& t = j.at("target_size");
        if (!t.is_array() || t.size() != 2 || !t[0].is_number_integer() || !t[1].is_number_integer())
            throw ValidationError("target_size must be [w, h] integers");
        r.target_w = t[0].get<int>();
        r.target_h = t[1].get<int>();
        if (!j.at("conf_floor").is_number()) throw ValidationError("conf_floor must be a number");
        r.conf_floor = j.at("conf_floor").get<double>();
        validate(r);
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed detect request: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

std::string fixture_key(const DetectRequest& req) {
    return req.image_ref + "|" + window_key(req.window) + "|" + std::to_string(req.target_w) + "x" +
           std::to_string(req.target_h);
}

FixtureBackend::FixtureBackend(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open fixture " + path.string());
    try {
        const json j = json::parse(is);
        for (const auto& e : j.at("entries")) {
            DetectRequest probe;
            probe.image_ref = "fixture";
            probe.target_w = probe.target_h = 1 << 20;
            const auto dets = parse_detect_response(json{{"detections", e.at("detections")}}.dump(), probe, true);
            table_[e.at("key").get<std::string>()] = dets;
        }
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": malformed fixture: " + e.what());
    } catch (const BackendError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void FixtureBackend::save(const std::filesystem::path& path) const {
    std::lock_guard lock(mu_);
    json entries = json::array();
    for (const auto& [key, dets] : table_) entries.push_back({{"key", key}, {"detections", detections_wire(dets)["detections"]}});
    write_file_atomic(path, json{{"entries", entries}}.dump(1) + "\n");
}

void FixtureBackend::add(const DetectRequest& req, std::vector<Detection> dets) {
    std::lock_guard lock(mu_);
    table_[fixture_key(req)] = std::move(dets);
}

std::size_t FixtureBackend::size() const {
    std::lock_guard lock(mu_);
    return table_.size();
}

std::vector<Detection> FixtureBackend::detect(const DetectRequest& req) {
    validate(req);
    const auto key = fixture_key(req);
    std::lock_guard lock(mu_);
    const auto it = table_.find(key);
    if (it == table_.end()) throw BackendError("fixture has no entry for " + key);
    std::vector<Detection> out;
    for (auto d : it->second) {
        if (d.score < req.conf_floor) continue;
        d.image_id = req.image_ref;
        d.source = DetectionSource::kInitial;
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<Detection> RecordingBackend::detect(const DetectRequest& req) {
    auto dets = inner_.detect(req);
    recorded_.add(req, dets);
    return dets;
}

// ---------------------------------------------------------------------------

void validate(const SyntheticParams& p) {
    std::vector<std::string> problems;
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(p.base_conf)) problems.push_back("synthetic.base_conf: must be finite");
    if (!finite(p.area_gain) || p.area_gain <= 0.0) problems.push_back("synthetic.area_gain: must be positive");
    if (!finite(p.noise_sigma) || p.noise_sigma < 0.0) problems.push_back("synthetic.noise_sigma: must be >= 0");
    if (!(p.min_visibility > 0.0 && p.min_visibility <= 1.0))
        problems.push_back("synthetic.min_visibility: must lie in (0, 1]");
    if (!finite(p.loc_error_px) || p.loc_error_px < 0.0) problems.push_back("synthetic.loc_error_px: must be >= 0");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

json to_json(const SyntheticParams& p) {
    return {{"base_conf", p.base_conf},       {"area_gain", p.area_gain},
            {"noise_sigma", p.noise_sigma},   {"seed", p.seed},
            {"min_visibility", p.min_visibility}, {"loc_error_px", p.loc_error_px}};
}

SyntheticParams synthetic_params_from_json(const json& j, SyntheticParams p) {
    if (!j.is_object()) throw ConfigError({"synthetic: expected a JSON object"});
    std::vector<std::string> problems;
    for (const auto& [k, v] : j.items()) {
        try {
            if (k == "base_conf") p.base_conf = v.get<double>();
            else if (k == "area_gain") p.area_gain = v.get<double>();
            else if (k == "noise_sigma") p.noise_sigma = v.get<double>();
            else if (k == "seed") p.seed = v.get<std::uint64_t>();
            else if (k == "min_visibility") p.min_visibility = v.get<double>();
            else if (k == "loc_error_px") p.loc_error_px = v.get<double>();
            else problems.push_back("synthetic." + k + ": unknown key");
        } catch (const json::exception&) {
            problems.push_back("synthetic." + k + ": wrong type");
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    validate(p);
    return p;
}

SyntheticSceneModel scene_from_manifest(const DatasetManifest& m, const SyntheticParams& params) {
    validate(params);
    SyntheticSceneModel model;
    model.params = params;
    const auto gts = load_ground_truth(m);
    for (const auto& e : m.entries) {
        SceneImage img{e.width, e.height, {}};
        for (const auto& g : gts)
            if (g.image_id == e.image_id) img.objects.push_back({g.box, g.class_id});
        model.images[e.image_id] = img;
        if (!e.image_path.empty() && e.image_path != e.image_id) model.images[e.image_path] = img;
    }
    return model;
}

double synth_confidence(const Box& obj, const CropWindow& window, int target_w, int target_h,
                        const SyntheticParams& params, const std::string& image_ref, std::size_t object_index) {
    const auto visible = image_to_window(obj, window);
    if (!visible) throw ValidationError("synth_confidence: object does not intersect the window");
    const double sx = static_cast<double>(target_w) / window.width();
    const double sy = static_cast<double>(target_h) / window.height();
    const double apparent = visible->box.area() * sx * sy;
    const double diag = std::hypot(static_cast<double>(target_w), static_cast<double>(target_h));
    double conf = params.base_conf + params.area_gain * std::sqrt(apparent) / diag;
    if (params.noise_sigma > 0.0) {
        std::uint64_t s = splitmix64(params.seed ^ fnv1a(image_ref));
        s = splitmix64(s ^ object_index);
        s = splitmix64(s ^ fnv1a(window_key(window)));
        const double u1 = (static_cast<double>(splitmix64(s) >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = (static_cast<double>(splitmix64(s + 1) >> 11) + 0.5) * 0x1.0p-53;
        conf += params.noise_sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    return std::clamp(conf, 0.01, 0.99);
}

SyntheticBackend::SyntheticBackend(SyntheticSceneModel model) : model_(std::move(model)) { validate(model_.params); }

std::vector<Detection> SyntheticBackend::detect(const DetectRequest& req) {
    validate(req);
    const auto it = model_.images.find(req.image_ref);
    if (it == model_.images.end()) throw BackendError("synthetic backend: unknown image '" + req.image_ref + "'");
    const SceneImage& scene = it->second;
    std::optional<CropWindow> win;
    try {
        win = req.window ? CropWindow(req.window->x0(), req.window->y0(), req.window->x1(), req.window->y1(),
                                      scene.width, scene.height)
                         : CropWindow::whole(scene.width, scene.height);
    } catch (const ValidationError& e) {
        throw BackendError("synthetic backend: window outside image '" + req.image_ref + "': " + e.what());
    }
    const double tw = req.target_w, th = req.target_h;
    const double sx = tw / win->width(), sy = th / win->height();
    const double pad = model_.params.loc_error_px;

    std::vector<Detection> out;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& obj = scene.objects[i];
        const auto local = image_to_window(obj.box, *win);
        if (!local || local->visible_fraction < model_.params.min_visibility) continue;
        const double conf = synth_confidence(obj.box, *win, req.target_w, req.target_h, model_.params, req.image_ref, i);
        if (conf < req.conf_floor) continue;
        const Box& b = local->box;
        const Box box = Box::from_corners(std::max(0.0, b.x0() * sx - pad), std::max(0.0, b.y0() * sy - pad),
                                          std::min(tw, b.x1() * sx + pad), std::min(th, b.y1() * sy + pad));
        out.push_back({box, conf, obj.class_id, req.image_ref, DetectionSource::kInitial, json::object()});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Detection> parse_detect_response(const std::string& body, const DetectRequest& req, bool strict) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw BackendError(std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("detections") || !j["detections"].is_array())
        throw BackendError("response must be an object with a 'detections' array");
    const double tw = req.target_w, th = req.target_h;
    std::vector<Detection> out;
    std::size_t idx = 0;
    for (const auto& d : j["detections"]) {
        const std::string at = "detections[" + std::to_string(idx++) + "]: ";
        if (!d.is_object()) throw BackendError(at + "not an object");
        const auto bb = d.value("bbox_xyxy", json());
        if (!bb.is_array() || bb.size() != 4) throw BackendError(at + "bbox_xyxy must be 4 numbers");
        double c[4];
        for (int k = 0; k < 4; ++k) {
            if (!bb[k].is_number()) throw BackendError(at + "bbox_xyxy must be 4 numbers");
            c[k] = bb[k].get<double>();
            if (!std::isfinite(c[k])) throw BackendError(at + "bbox_xyxy has a non-finite value");
        }
        if (!(c[0] < c[2] && c[1] < c[3])) throw BackendError(at + "bbox_xyxy must satisfy x0 < x1, y0 < y1");
        if (!d.contains("score") || !d["score"].is_number()) throw BackendError(at + "score must be a number");
        const double score = d["score"].get<double>();
        if (!(score >= 0.0 && score <= 1.0)) throw BackendError(at + "score outside [0, 1]");
        if (!d.contains("class_id") || !d["class_id"].is_number_integer() || d["class_id"].get<long long>() < 0)
            throw BackendError(at + "class_id must be a non-negative integer");
        const bool outside = c[0] < 0.0 || c[1] < 0.0 || c[2] > tw || c[3] > th;
        if (strict && outside) throw BackendError(at + "box outside the target frame");
        if (strict && score < req.conf_floor) throw BackendError(at + "score below conf_floor");
        if (score < req.conf_floor) continue;
        const auto box = clip(Box::from_corners(c[0], c[1], c[2], c[3]), 0.0, 0.0, tw, th);
        if (!box) continue;
        out.push_back({*box, score, d["class_id"].get<int>(), req.image_ref, DetectionSource::kInitial, json::object()});
    }
    return out;
}

struct ExternalBackend::Connection {
    std::mutex mu;
    httplib::Client client;
    explicit Connection(const std::string& url) : client(url) {}
};

ExternalBackend::ExternalBackend(ExternalOptions opts) : opts_(std::move(opts)) {
    if (opts_.url.empty()) throw ValidationError("external backend: url is empty");
    if (opts_.retries < 0) throw ValidationError("external backend: retries must be >= 0");
    const auto n = std::max<std::size_t>(1, opts_.connections);
    for (std::size_t i = 0; i < n; ++i) {
        auto c = std::make_unique<Connection>(opts_.url);
        if (!c->client.is_valid()) throw ValidationError("external backend: invalid url '" + opts_.url + "'");
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts_.timeout - secs);
        c->client.set_connection_timeout(secs.count(), usecs.count());
        c->client.set_read_timeout(secs.count(), usecs.count());
        c->client.set_write_timeout(secs.count(), usecs.count());
        c->client.set_keep_alive(true);
        c->client.set_tcp_nodelay(true);
        pool_.push_back(std::move(c));
    }
}

ExternalBackend::~ExternalBackend() = default;

std::vector<Detection> ExternalBackend::detect(const DetectRequest& req) {
    validate(req);
    const std::string body = request_to_json(req).dump();
    Connection& conn = *pool_[next_.fetch_add(1) % pool_.size()];
    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};

    std::string last_error;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
        if (attempt > 0) {
            std::uniform_real_distribution<double> jitter(0.5, 1.5);
            const double ms = static_cast<double>(opts_.backoff.count()) * (1 << (attempt - 1)) * jitter(jitter_rng);
            std::this_thread::sleep_for(std::chrono::microseconds(static_cast<long long>(ms * 1000.0)));
        }
        httplib::Result res;
        {
            std::lock_guard lock(conn.mu);
            res = conn.client.Post("/detect", body, "application/json");
        }
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw BackendError("HTTP " + std::to_string(res->status) + " from " + opts_.url + " for request " + body +
                               ": " + res->body);
        try {
            return parse_detect_response(res->body, req);
        } catch (const BackendError& e) {
            throw BackendError(std::string(e.what()) + " (request " + body + ")");
        }
    }
    throw BackendError(last_error + " after " + std::to_string(opts_.retries + 1) + " attempts to " + opts_.url +
                       " for request " + body);
}

// ---------------------------------------------------------------------------

SyntheticSceneModel conformance_scene() {
    SceneImage img{1280, 1024, {}};
    img.objects = {
        {Box::from_corners(100, 100, 164, 164), 0},    {Box::from_corners(600, 400, 624, 424), 1},
        {Box::from_corners(900, 700, 916, 716), 2},    {Box::from_corners(1230, 20, 1280, 80), 1},
        {Box::from_corners(1240, 990, 1252, 1002), 0}, {Box::from_corners(200, 200, 240, 230), 2},
    };
    SyntheticSceneModel m;
    m.images["conformance/scene_0.png"] = img;
    m.params.loc_error_px = 1.0;
    return m;
}

std::vector<ConformanceCase> canned_conformance_cases(bool expected) {
    const std::string ref = "conformance/scene_0.png";
    const int W = 1280, H = 1024;
    std::vector<ConformanceCase> cases{
        {{ref, std::nullopt, 640, 640, 0.05}, {}},
        {{ref, CropWindow(560, 360, 680, 460, W, H), 640, 640, 0.05}, {}},
        {{ref, CropWindow(1152, 896, 1280, 1024, W, H), 640, 640, 0.0}, {}},
        {{ref, std::nullopt, 800, 480, 0.1}, {}},
        {{ref, CropWindow(0, 0, 320, 320, W, H), 640, 640, 0.9}, {}},
    };
    if (expected) {
        SyntheticBackend synth(conformance_scene());
        for (auto& c : cases) c.expected = synth.detect(c.request);
    }
    return cases;
}

std::vector<ConformanceResult> run_conformance(const ExternalOptions& server,
                                               const std::vector<ConformanceCase>& cases) {
    static const char* kLabels[] = {"whole-image", "interior-crop", "border-crop", "non-square-target", "high-floor"};
    httplib::Client client(server.url);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(server.timeout).count();
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    client.set_tcp_nodelay(true);

    std::vector<ConformanceResult> results;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        ConformanceResult r;
        r.label = i < 5 ? kLabels[i] : "case-" + std::to_string(i);
        const auto& c = cases[i];
        const std::string body = request_to_json(c.request).dump();
        try {
            std::vector<Detection> first;
            for (int round = 0; round < 2; ++round) {
                auto res = client.Post("/detect", body, "application/json");
                if (!res) throw BackendError("transport error: " + httplib::to_string(res.error()));
                if (res->status != 200) throw BackendError("HTTP " + std::to_string(res->status));
                auto dets = parse_detect_response(res->body, c.request, true);
                if (round == 0) first = std::move(dets);
                else if (dets != first) throw BackendError("repeated request returned a different response");
            }
            if (c.expected && first != *c.expected)
                throw BackendError("response differs from the expected detections (" +
                                   detections_wire(first).dump() + " vs " + detections_wire(*c.expected).dump() + ")");
            r.passed = true;
            r.detail = std::to_string(first.size()) + " detections";
        } catch (const BackendError& e) {
            r.detail = e.what();
        }
        results.push_back(std::move(r));
    }
    return results;
}

// ---------------------------------------------------------------------------

struct DetectorServer::Impl {
    DetectorBackend& backend;
    httplib::Server server;
    std::thread thread;
    std::atomic<int> fail_budget{0};
    std::atomic<std::size_t> served{0};

    explicit Impl(DetectorBackend& b) : backend(b) {
        server.set_tcp_nodelay(true);
        server.Post("/detect", [this](const httplib::Request& rq, httplib::Response& rs) {
            ++served;
            if (fail_budget.load() > 0 && fail_budget.fetch_sub(1) > 0) {
                rs.status = 503;
                rs.set_content(R"({"error":"injected failure"})", "application/json");
                return;
            }
            DetectRequest req;
            try {
                req = request_from_json(json::parse(rq.body));
            } catch (const std::exception& e) {
                rs.status = 400;
                rs.set_content(json{{"error", e.what()}}.dump(), "application/json");
                return;
            }
            try {
                rs.set_content(detections_wire(backend.detect(req)).dump(), "application/json");
            } catch (const BackendError& e) {
                rs.status = 404;
                rs.set_content(json{{"error", e.what()}}.dump(), "application/json");
            } catch (const std::exception& e) {
                rs.status = 500;
                rs.set_content(json{{"error", e.what()}}.dump(), "application/json");
            }
        });
    }
};

DetectorServer::DetectorServer(DetectorBackend& backend) : impl_(std::make_unique<Impl>(backend)) {}

DetectorServer::~DetectorServer() { stop(); }

int DetectorServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) bound = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port)) bound = -1;
    if (bound < 0) throw BackendError("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void DetectorServer::listen(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw BackendError("cannot listen on " + host + ":" + std::to_string(port));
}

void DetectorServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void DetectorServer::fail_next(int n) { impl_->fail_budget = n; }

std::size_t DetectorServer::requests_served() const { return impl_->served; }

}  // namespace uavdet

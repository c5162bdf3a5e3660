#include "mer/service.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mer/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mer {

namespace {

[[noreturn]] void not_found(const std::string& what) { throw ServiceError(404, "not_found", what); }
[[noreturn]] void unprocessable(const std::string& what) { throw ServiceError(422, "unprocessable", what); }

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isxdigit(c); });
}

void write_atomic(const fs::path& path, const std::string& data) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << data;
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string string_or_empty(const json& j, const char* key) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<std::string>() : std::string();
}

Job job_from_json(const json& j) {
  Job job;
  job.id = j.at("id").get<std::string>();
  job.state = parse_job_state(j.at("state").get<std::string>());
  job.progress = j.value("progress", 0.0);
  job.image_id = string_or_empty(j, "image_id");
  job.mask_id = string_or_empty(j, "mask_id");
  if (j.contains("auto_mask") && j["auto_mask"].is_object()) {
    FlawParams p;
    p.lambda_g = j["auto_mask"].value("lambda_g", p.lambda_g);
    p.lambda_p = j["auto_mask"].value("lambda_p", p.lambda_p);
    job.auto_mask = p;
  }
  job.stages = j.value("stages", std::vector<std::string>{});
  job.error = string_or_empty(j, "error");
  return job;
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    throw ServiceError(400, "bad_request", "request body must be a JSON object");
  }
  return body;
}

template <typename T>
T field(const json& body, const std::string& key) {
  if (!body.contains(key)) unprocessable("missing field '" + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    unprocessable("field '" + key + "' has the wrong type");
  }
}

template <typename T>
T field_or(const json& body, const std::string& key, T fallback) {
  if (!body.contains(key) || body.at(key).is_null()) return fallback;
  return field<T>(body, key);
}

Bytes uploaded_file(const httplib::Request& req) {
  if (!req.is_multipart_form_data() || req.files.empty()) {
    throw ServiceError(400, "bad_request", "expected a multipart upload with one PNG file");
  }
  const auto& f = req.files.begin()->second;
  return Bytes(f.content.begin(), f.content.end());
}

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, json{{"code", code}, {"message", message}}, status);
}

template <typename F>
httplib::Server::Handler guarded(F&& fn) {
  return [fn = std::forward<F>(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const ArgumentError& e) {
      send_error(res, 422, "unprocessable", e.what());
    } catch (const DecodeError& e) {
      send_error(res, 422, "unprocessable", e.what());
    } catch (const GenerationError& e) {
      send_error(res, 422, "unprocessable", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

const char* job_state_name(JobState s) {
  switch (s) {
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Done: return "DONE";
    case JobState::Failed: return "FAILED";
  }
  return "?";
}

JobState parse_job_state(const std::string& s) {
  for (JobState st : {JobState::Queued, JobState::Running, JobState::Done, JobState::Failed})
    if (s == job_state_name(st)) return st;
  throw ArgumentError("unknown job state '" + s + "'");
}

std::string job_to_json(const Job& job) {
  json j;
  j["id"] = job.id;
  j["state"] = job_state_name(job.state);
  j["progress"] = job.progress;
  j["image_id"] = job.image_id;
  j["mask_id"] = job.mask_id.empty() ? json(nullptr) : json(job.mask_id);
  if (job.auto_mask) {
    j["auto_mask"] = {{"lambda_g", job.auto_mask->lambda_g}, {"lambda_p", job.auto_mask->lambda_p}};
  } else {
    j["auto_mask"] = nullptr;
  }
  j["stages"] = job.stages;
  j["error"] = job.error.empty() ? json(nullptr) : json(job.error);
  return j.dump();
}

RestorationService::RestorationService(fs::path store, std::shared_ptr<const Model> model, int workers)
    : store_(std::move(store)), model_(std::move(model)) {
  if (!model_) throw ArgumentError("service needs a model");
  fs::create_directories(store_ / "images");
  fs::create_directories(store_ / "masks");
  fs::create_directories(store_ / "jobs");
  reload();
  for (int i = 0; i < std::max(1, workers); ++i) workers_.emplace_back([this] { worker_loop(); });
}

RestorationService::~RestorationService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
}

fs::path RestorationService::image_path(const std::string& id) const { return store_ / "images" / (id + ".png"); }
fs::path RestorationService::mask_path(const std::string& id) const { return store_ / "masks" / (id + ".png"); }
fs::path RestorationService::job_dir(const std::string& id) const { return store_ / "jobs" / id; }

std::string RestorationService::new_id(const fs::path& dir, const std::string& suffix) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(id_mu_);
  for (;;) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << rng() << std::setw(16) << rng();
    const std::string id = os.str();
    if (!fs::exists(dir / (id + suffix))) return id;
  }
}

void RestorationService::persist(const Job& job) const {
  fs::create_directories(job_dir(job.id));
  write_atomic(job_dir(job.id) / "job.json", job_to_json(job));
}

void RestorationService::reload() {
  for (const auto& e : fs::directory_iterator(store_ / "jobs")) {
    const fs::path meta = e.path() / "job.json";
    if (!fs::exists(meta)) continue;
    std::ifstream f(meta);
    const json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) continue;
    Job job;
    try {
      job = job_from_json(j);
    } catch (const std::exception&) {
      continue;
    }
    if (job.state == JobState::Queued || job.state == JobState::Running) {
      job.state = JobState::Failed;
      job.error = "interrupted by a server restart";
      persist(job);
    }
    jobs_[job.id] = job;
  }
}

Image RestorationService::image(const std::string& id) const {
  if (!valid_id(id) || !fs::exists(image_path(id))) not_found("unknown image id '" + id + "'");
  return load_image(image_path(id));
}

Mask RestorationService::mask(const std::string& id) const {
  if (!valid_id(id) || !fs::exists(mask_path(id))) not_found("unknown mask id '" + id + "'");
  return load_mask(mask_path(id));
}

std::string RestorationService::put_image(const Bytes& png) {
  Image img;
  try {
    img = decode_image(png);
  } catch (const DecodeError& e) {
    unprocessable(std::string("not a readable PNG: ") + e.what());
  }
  if (img.channels() != 3 && img.channels() != 1) unprocessable("unsupported channel count");
  const std::string id = new_id(store_ / "images", ".png");
  save_image(image_path(id), img);
  return id;
}

std::string RestorationService::simulate_brightness(const std::string& image_id, double factor) {
  const Image img = image(image_id);
  if (!(factor > 0.0 && factor <= 1.0)) unprocessable("factor must be in (0, 1]");
  const std::string id = new_id(store_ / "images", ".png");
  save_image(image_path(id), scale_brightness(img, factor));
  return id;
}

std::string RestorationService::random_mask(const RandomMaskRequest& req) {
  Mask m;
  MaskSpec spec;
  spec.family = req.family;
  spec.coverage = req.coverage;
  spec.seed = req.seed;
  if (req.image_id) {
    const Image img = image(*req.image_id);
    if (img.height() == img.width()) {
      spec.size = img.height();
      spec.validate();
      m = generate_mask(spec);
    } else {
      // one mask per 256 tile, cropped to the image
      spec.size = kInpaintTile;
      spec.validate();
      const TileGrid grid = make_tile_grid(img.height(), img.width(), kInpaintTile);
      std::vector<Mask> tiles;
      for (int t = 0; t < grid.tile_count(); ++t) {
        MaskSpec ts = spec;
        ts.seed = spec.seed + static_cast<std::uint64_t>(t);
        tiles.push_back(generate_mask(ts));
      }
      m = stitch_tiles(grid, tiles);
    }
  } else {
    if (req.size < 16 || req.size > 4096) unprocessable("size must be in [16, 4096]");
    spec.size = req.size;
    spec.validate();
    m = generate_mask(spec);
  }
  const std::string id = new_id(store_ / "masks", ".png");
  save_mask(mask_path(id), m);
  return id;
}

std::string RestorationService::auto_mask(const std::string& image_id, const FlawParams& params) {
  const Image img = image(image_id);
  params.validate();
  const Image rgb = ensure_rgb(img);
  const std::string id = new_id(store_ / "masks", ".png");
  save_mask(mask_path(id), detect_flaws(rgb, params));
  return id;
}

std::string RestorationService::put_mask(const Bytes& png) {
  Mask m;
  try {
    m = decode_mask(png);
  } catch (const DecodeError& e) {
    unprocessable(std::string("not a readable PNG: ") + e.what());
  }
  const std::string id = new_id(store_ / "masks", ".png");
  save_mask(mask_path(id), m);
  return id;
}

std::string RestorationService::submit_restore(const std::string& image_id, const std::optional<std::string>& mask_id,
                                               const std::optional<FlawParams>& auto_params) {
  if (mask_id.has_value() == auto_params.has_value()) {
    unprocessable("give exactly one of mask_id and auto");
  }
  const Image img = image(image_id);
  if (mask_id) {
    const Mask m = mask(*mask_id);
    if (m.height() != img.height() || m.width() != img.width()) {
      unprocessable("mask is " + std::to_string(m.width()) + "x" + std::to_string(m.height()) + ", image is " +
                    std::to_string(img.width()) + "x" + std::to_string(img.height()));
    }
  } else {
    auto_params->validate();
  }
  Job job;
  job.id = new_id(store_ / "jobs", "");
  job.image_id = image_id;
  if (mask_id) job.mask_id = *mask_id;
  job.auto_mask = auto_params;
  persist(job);
  {
    std::lock_guard lock(mu_);
    jobs_[job.id] = job;
    queue_.push_back(job.id);
  }
  cv_.notify_one();
  return job.id;
}

Job RestorationService::status(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) not_found("unknown job id '" + job_id + "'");
  return it->second;
}

Bytes RestorationService::stage_png(const std::string& job_id, const std::string& stage) const {
  if (std::find(kJobStages.begin(), kJobStages.end(), stage) == kJobStages.end()) {
    not_found("unknown stage '" + stage + "'");
  }
  const Job job = status(job_id);
  if (std::find(job.stages.begin(), job.stages.end(), stage) == job.stages.end()) {
    not_found("job " + job_id + " has no '" + stage + "' artifact (state " + job_state_name(job.state) + ")");
  }
  return read_file(job_dir(job_id) / (stage + ".png"));
}

void RestorationService::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
}

void RestorationService::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      ++running_;
      Job& job = jobs_[id];
      job.state = JobState::Running;
      persist(job);
    }
    run_job(id);
    {
      std::lock_guard lock(mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void RestorationService::run_job(const std::string& id) {
  Job snapshot;
  {
    std::lock_guard lock(mu_);
    snapshot = jobs_[id];
  }
  try {
    const Image img = image(snapshot.image_id);
    RestoreOptions opts;
    Mask m;
    if (snapshot.auto_mask) {
      opts.mode = MaskMode::Auto;
      opts.flaw = *snapshot.auto_mask;
    } else {
      opts.mode = MaskMode::Given;
      m = mask(snapshot.mask_id);
    }
    const RestoreResult r = restore_image(*model_, img, opts, opts.mode == MaskMode::Given ? &m : nullptr,
                                          [&](int done, int total) {
                                            std::lock_guard lock(mu_);
                                            jobs_[id].progress = 0.9 * done / total;
                                          });
    const TextChunks meta = {{"mer:job", id}};
    const fs::path dir = job_dir(id);
    save_image(dir / "enhanced.png", r.enhanced, meta);
    save_image(dir / "coarse.png", r.coarse, meta);
    save_image(dir / "local.png", r.local, meta);
    save_image(dir / "global.png", r.global, meta);
    save_image(dir / "final.png", r.final, meta);
    save_mask(dir / "mask.png", r.mask, meta);
    std::lock_guard lock(mu_);
    Job& job = jobs_[id];
    job.stages = kJobStages;
    job.progress = 1.0;
    job.state = JobState::Done;
    persist(job);
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    Job& job = jobs_[id];
    job.state = JobState::Failed;
    job.error = e.what();
    persist(job);
  }
}

void register_routes(httplib::Server& server, RestorationService& svc) {
  server.Post("/api/images", guarded([&](const httplib::Request& req, httplib::Response& res) {
                send_json(res, {{"image_id", svc.put_image(uploaded_file(req))}});
              }));
  server.Post("/api/brightness", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const json b = parse_body(req);
                send_json(res, {{"image_id", svc.simulate_brightness(field<std::string>(b, "image_id"),
                                                                     field<double>(b, "factor"))}});
              }));
  server.Post("/api/masks/random", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const json b = parse_body(req);
                RandomMaskRequest r;
                if (b.contains("image_id") && !b["image_id"].is_null()) r.image_id = field<std::string>(b, "image_id");
                r.size = field_or<int>(b, "size", 256);
                r.family = parse_family(field_or<std::string>(b, "family", "dusk"));
                r.coverage = field_or<double>(b, "coverage", 0.2);
                r.seed = field_or<std::uint64_t>(b, "seed", 0);
                send_json(res, {{"mask_id", svc.random_mask(r)}});
              }));
  server.Post("/api/masks/auto", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const json b = parse_body(req);
                FlawParams p;
                p.lambda_g = field_or<double>(b, "lambda_g", p.lambda_g);
                p.lambda_p = field_or<double>(b, "lambda_p", p.lambda_p);
                send_json(res, {{"mask_id", svc.auto_mask(field<std::string>(b, "image_id"), p)}});
              }));
  server.Put("/api/masks", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, {{"mask_id", svc.put_mask(uploaded_file(req))}});
             }));
  server.Post("/api/restore", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const json b = parse_body(req);
                std::optional<std::string> mask_id;
                std::optional<FlawParams> auto_params;
                if (b.contains("mask_id") && !b["mask_id"].is_null()) mask_id = field<std::string>(b, "mask_id");
                if (b.contains("auto") && !b["auto"].is_null() && b["auto"] != false) {
                  FlawParams p;
                  if (b["auto"].is_object()) {
                    p.lambda_g = field_or<double>(b["auto"], "lambda_g", p.lambda_g);
                    p.lambda_p = field_or<double>(b["auto"], "lambda_p", p.lambda_p);
                  } else if (b["auto"] != true) {
                    unprocessable("'auto' must be true or an object with lambda_g / lambda_p");
                  }
                  auto_params = p;
                }
                send_json(res, {{"job_id", svc.submit_restore(field<std::string>(b, "image_id"), mask_id, auto_params)}},
                          202);
              }));
  server.Get(R"(/api/jobs/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
               res.set_content(job_to_json(svc.status(req.matches[1])), "application/json");
             }));
  server.Get(R"(/api/jobs/([^/]+)/stages/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
               const Bytes png = svc.stage_png(req.matches[1], req.matches[2]);
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) {
      const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
      send_error(res, res.status, code, "no route for " + req.method + " " + req.path);
    }
  });
}

void serve(RestorationService& service, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, service);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace mer

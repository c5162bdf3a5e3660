#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mer/flawfind.hpp"
#include "mer/maskgen.hpp"
#include "mer/pipeline.hpp"
#include "mer/png.hpp"

namespace httplib {
class Server;
}

namespace mer {

// Error carried to HTTP clients as {code, message} with `status`.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

enum class JobState { Queued, Running, Done, Failed };
const char* job_state_name(JobState s);
JobState parse_job_state(const std::string& s);

// Stage artifacts of a finished job, in presentation order.
inline const std::vector<std::string> kJobStages = {"enhanced", "coarse", "local", "global", "final", "mask"};

struct Job {
  std::string id;
  JobState state = JobState::Queued;
  double progress = 0.0;
  std::string image_id;
  std::string mask_id;  // empty for auto-mask jobs
  std::optional<FlawParams> auto_mask;
  std::vector<std::string> stages;  // artifacts present on disk
  std::string error;
};

std::string job_to_json(const Job& job);

struct RandomMaskRequest {
  std::optional<std::string> image_id;  // mask takes the image dimensions
  int size = 256;
  MaskFamily family = MaskFamily::Dusk;
  double coverage = 0.2;
  std::uint64_t seed = 0;
};

// Flat directory store: images/<id>.png, masks/<id>.png,
// jobs/<id>/job.json and jobs/<id>/<stage>.png. Jobs run FIFO on a fixed
// worker pool; the model is shared read-only.
class RestorationService {
 public:
  RestorationService(std::filesystem::path store, std::shared_ptr<const Model> model, int workers = 1);
  ~RestorationService();
  RestorationService(const RestorationService&) = delete;
  RestorationService& operator=(const RestorationService&) = delete;

  std::string put_image(const Bytes& png);
  std::string simulate_brightness(const std::string& image_id, double factor);
  std::string random_mask(const RandomMaskRequest& req);
  std::string auto_mask(const std::string& image_id, const FlawParams& params);
  std::string put_mask(const Bytes& png);

  // Exactly one of mask_id / auto_params.
  std::string submit_restore(const std::string& image_id, const std::optional<std::string>& mask_id,
                             const std::optional<FlawParams>& auto_params);
  Job status(const std::string& job_id) const;
  Bytes stage_png(const std::string& job_id, const std::string& stage) const;

  Image image(const std::string& image_id) const;
  Mask mask(const std::string& mask_id) const;

  // Blocks until the queue is empty and no job is running.
  void wait_idle();
  const std::filesystem::path& store() const { return store_; }

 private:
  std::filesystem::path image_path(const std::string& id) const;
  std::filesystem::path mask_path(const std::string& id) const;
  std::filesystem::path job_dir(const std::string& id) const;
  std::string new_id(const std::filesystem::path& dir, const std::string& suffix);
  void persist(const Job& job) const;
  void reload();
  void worker_loop();
  void run_job(const std::string& id);

  std::filesystem::path store_;
  std::shared_ptr<const Model> model_;
  mutable std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  int running_ = 0;
  bool stopping_ = false;
  std::mutex id_mu_;
  std::vector<std::thread> workers_;
};

// Routes of the JSON-over-HTTP API bound to a service.
void register_routes(httplib::Server& server, RestorationService& service);

// Blocks serving on host:port until the server is stopped.
void serve(RestorationService& service, const std::string& host, int port);

}  // namespace mer

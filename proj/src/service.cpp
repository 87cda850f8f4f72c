#include "eatkit/service.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "eatkit/pipeline.hpp"

// After Eigen: resolv.h defines a _res macro that clashes with it.
#include <httplib.h>

namespace eatkit {

using nlohmann::json;

namespace {

std::string kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::io: return "io";
    case ErrorKind::solver: return "solver";
  }
  return "unknown";
}

enum class JobStatus { queued, running, succeeded, failed };

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

struct Job {
  std::string id;
  MinTradeoffRequest request;
  JobStatus status = JobStatus::queued;
  std::optional<MinTradeoffInfo> result;
  json error;
};

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw validation_error("request.json", std::string("request body is not valid JSON: ") + e.what());
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) { send_json(res, error_body(e), http_status(e)); }

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, validation_error("request.schema", e.what()));
    } catch (const std::exception& e) {
      send_json(res, {{"error", {{"code", "internal"}, {"message", e.what()}, {"kind", "internal"}}}}, 500);
    }
  };
}

}  // namespace

json error_body(const Error& e) {
  return {{"error", {{"code", e.code()}, {"message", e.what()}, {"kind", kind_name(e.kind())}}}};
}

int http_status(const Error& e) { return e.kind() == ErrorKind::solver ? 422 : 400; }

struct Service::Impl {
  ServiceOptions options;
  httplib::Server server;
  std::thread server_thread;

  // Single synchronization point for every piece of mutable state.
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::uint64_t next_id = 1;
  std::optional<DataConfig> config;
  std::optional<EberData> eber;
  std::optional<MinTradeoffRequest> certificate;
  std::map<std::string, Job> jobs;
  std::map<std::string, std::string> job_by_key;
  std::map<std::string, SweepDocument> rates;
  std::deque<std::string> queue;
  std::vector<std::thread> workers;

  explicit Impl(ServiceOptions o) : options(std::move(o)) {
    if (!options.state_dir.empty()) {
      std::error_code ec;
      for (const char* sub : {"", "jobs", "rates"}) std::filesystem::create_directories(options.state_dir / sub, ec);
      if (ec) throw io_error("io.state_dir", "cannot create state directory " + options.state_dir.string());
    }
    unsigned n = options.workers ? options.workers : std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    for (unsigned i = 0; i < n; ++i) workers.emplace_back([this] { work(); });
    routes();
  }

  ~Impl() {
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    cv.notify_all();
    for (auto& w : workers) w.join();
  }

  void persist(StageKind kind, const json& payload, const std::string& nickname, const std::string& name) {
    if (options.state_dir.empty()) return;
    save_stage(make_document(kind, payload, nickname), options.state_dir / (name + ".edq"));
  }

  std::string new_id(const char* prefix) { return prefix + std::to_string(next_id++); }

  void work() {
    for (;;) {
      std::string id;
      MinTradeoffRequest request;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        auto& job = jobs.at(id);
        job.status = JobStatus::running;
        request = job.request;
      }
      std::optional<MinTradeoffInfo> result;
      json error;
      try {
        result = calculate_mintradeoff(request);
        persist(StageKind::min_tradeoff, to_json(*result), result->setup_nickname, "jobs/" + id);
      } catch (const Error& e) {
        error = error_body(e).at("error");
      } catch (const std::exception& e) {
        error = {{"code", "internal"}, {"message", e.what()}, {"kind", "internal"}};
      }
      std::lock_guard lock(mu);
      auto& job = jobs.at(id);
      job.result = std::move(result);
      job.error = std::move(error);
      job.status = job.result ? JobStatus::succeeded : JobStatus::failed;
    }
  }

  json job_json(const Job& job) const {
    json j = {{"job_id", job.id}, {"status", to_string(job.status)}};
    if (job.result) j["result"] = to_json(*job.result);
    if (!job.error.is_null()) j["error"] = job.error;
    return j;
  }

  void routes() {
    server.Post("/data-config", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto c = data_config_from_json(parse_body(req));
                  const json out = to_json(c);
                  persist(StageKind::data_config, out, c.setup_nickname, "data-config");
                  std::lock_guard lock(mu);
                  config = c;
                  send_json(res, out);
                }));

    server.Post("/parse-data", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  DataConfig c;
                  if (body.contains("config")) {
                    c = data_config_from_json(body.at("config"));
                  } else {
                    std::lock_guard lock(mu);
                    if (!config) throw validation_error("parse.no_config", "no data config has been posted");
                    c = *config;
                  }
                  if (body.contains("directory_with_datafiles")) {
                    c.directory_with_datafiles = body.at("directory_with_datafiles").get<std::string>();
                  }
                  const auto e = parse_data(c);
                  const json out = to_json(e);
                  persist(StageKind::eber_data, out, c.setup_nickname, "eber-data");
                  std::lock_guard lock(mu);
                  eber = e;
                  send_json(res, out);
                }));

    server.Get("/certificate", guarded([this](const httplib::Request&, httplib::Response& res) {
                 std::lock_guard lock(mu);
                 if (!certificate) {
                   send_json(res, error_body(validation_error("certificate.none", "no certificate has been set")), 404);
                   return;
                 }
                 send_json(res, to_json(*certificate));
               }));

    server.Post("/certificate", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  std::optional<EberData> data;
                  {
                    std::lock_guard lock(mu);
                    data = eber;
                  }
                  const auto r = certificate_from_body(body, data ? &*data : nullptr);
                  const json out = to_json(r);
                  persist(StageKind::certificate, out, r.setup_nickname, "certificate");
                  std::lock_guard lock(mu);
                  certificate = r;
                  send_json(res, out);
                }));

    server.Post("/min-tradeoff", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  MinTradeoffRequest r;
                  if (body.empty()) {
                    std::lock_guard lock(mu);
                    if (!certificate) throw validation_error("certificate.none", "no certificate has been set");
                    r = *certificate;
                  } else {
                    std::optional<EberData> data;
                    {
                      std::lock_guard lock(mu);
                      data = eber;
                    }
                    r = certificate_from_body(body, data ? &*data : nullptr);
                  }
                  const std::string key = to_json(r).dump();
                  std::unique_lock lock(mu);
                  if (auto it = job_by_key.find(key); it != job_by_key.end()) {
                    json out = job_json(jobs.at(it->second));
                    out["cached"] = true;
                    send_json(res, out, 202);
                    return;
                  }
                  const std::string id = new_id("job-");
                  jobs[id] = Job{id, r, JobStatus::queued, std::nullopt, nullptr};
                  job_by_key[key] = id;
                  queue.push_back(id);
                  json out = job_json(jobs.at(id));
                  out["cached"] = false;
                  lock.unlock();
                  cv.notify_one();
                  send_json(res, out, 202);
                }));

    server.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::lock_guard lock(mu);
                 const auto it = jobs.find(req.matches[1].str());
                 if (it == jobs.end()) {
                   send_json(res, error_body(validation_error("job.unknown", "unknown job " + req.matches[1].str())),
                             404);
                   return;
                 }
                 send_json(res, job_json(it->second));
               }));

    server.Post("/rates", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  MinTradeoffInfo f;
                  if (body.contains("min_tradeoff")) {
                    f = min_tradeoff_from_json(body.at("min_tradeoff"));
                  } else if (body.contains("job_id")) {
                    const auto id = body.at("job_id").get<std::string>();
                    std::lock_guard lock(mu);
                    const auto it = jobs.find(id);
                    if (it == jobs.end()) throw validation_error("job.unknown", "unknown job " + id);
                    if (!it->second.result) {
                      throw validation_error("job.not_ready", "job " + id + " is " + to_string(it->second.status));
                    }
                    f = *it->second.result;
                  } else {
                    throw validation_error("rates.no_min_tradeoff", "rates need \"min_tradeoff\" or \"job_id\"");
                  }
                  const auto request = sweep_request_from_json(body.value("sweep", json::object()));
                  const auto doc = run_rates(f, request);
                  std::string id;
                  {
                    std::lock_guard lock(mu);
                    id = new_id("rates-");
                    rates[id] = doc;
                  }
                  persist(StageKind::sweep_result, to_json(doc), f.setup_nickname, "rates/" + id);
                  const auto& best = doc.result.best_cell();
                  send_json(res, {{"rates_id", id},
                                  {"asymptotic_rate", doc.result.asymptotic_rate},
                                  {"best_cell", to_json(best)},
                                  {"parameters", parameter_dictionary(best, doc.result, f)},
                                  {"sweep", to_json(doc)}});
                }));

    server.Get(R"(/rates/([^/]+)/grid)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1].str();
                 EatSweepResult result;
                 {
                   std::lock_guard lock(mu);
                   const auto it = rates.find(id);
                   if (it == rates.end()) {
                     send_json(res, error_body(validation_error("rates.unknown", "unknown sweep " + id)), 404);
                     return;
                   }
                   result = it->second.result;
                 }
                 auto param = [&](const char* k, const char* fallback) {
                   return req.has_param(k) ? req.get_param_value(k) : std::string(fallback);
                 };
                 const auto grid =
                     sweep_grid(result, sweep_axis_from_string(param("x", "log2_inv_beta")),
                                sweep_axis_from_string(param("y", "gamma")));
                 const auto format = param("format", "csv");
                 if (format == "csv") {
                   res.set_content(to_csv(grid), "text/csv");
                 } else if (format == "json") {
                   send_json(res, to_json(grid));
                 } else {
                   throw validation_error("grid.format", "format must be csv or json, got '" + format + "'");
                 }
               }));
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() = default;

int Service::start() {
  auto& s = impl_->server;
  int port = impl_->options.port;
  if (port == 0) {
    port = s.bind_to_any_port(impl_->options.bind_address);
  } else if (!s.bind_to_port(impl_->options.bind_address, port)) {
    port = -1;
  }
  if (port < 0) {
    throw io_error("io.bind", "cannot bind " + impl_->options.bind_address + ":" + std::to_string(impl_->options.port));
  }
  impl_->server_thread = std::thread([&s] { s.listen_after_bind(); });
  return port;
}

void Service::run() {
  auto& s = impl_->server;
  if (!s.bind_to_port(impl_->options.bind_address, impl_->options.port)) {
    throw io_error("io.bind", "cannot bind " + impl_->options.bind_address + ":" + std::to_string(impl_->options.port));
  }
  s.listen_after_bind();
}

void Service::stop() { impl_->server.stop(); }

}  // namespace eatkit

// Local HTTP endpoint that answers document POSTs with a scripted sequence of statuses.
#pragma once

#include <httplib.h>

#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace benchkit::fixtures {

struct RecordedRequest {
    std::string path;
    std::string body;
    std::string authorization;
    std::string content_type;
};

class StubServer {
  public:
    /// Statuses are served in order; the last one repeats once the script runs out.
    explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
        server_.Post(R"(/.*)", [this](const httplib::Request &req, httplib::Response &res) {
            std::lock_guard lock(mu_);
            requests_.push_back({req.path, req.body, req.get_header_value("Authorization"),
                                 req.get_header_value("Content-Type")});
            const std::size_t i = std::min(requests_.size() - 1, statuses_.size() - 1);
            res.status = statuses_[i];
            res.set_content(R"({"result":"stub"})", "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    StubServer(const StubServer &) = delete;
    StubServer &operator=(const StubServer &) = delete;

    [[nodiscard]] std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    [[nodiscard]] std::vector<RecordedRequest> requests() {
        std::lock_guard lock(mu_);
        return requests_;
    }

  private:
    httplib::Server server_;
    std::vector<int> statuses_;
    std::vector<RecordedRequest> requests_;
    std::mutex mu_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace benchkit::fixtures

// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Diffusion prior served over a byte stream.
//
// Every message is one frame:
//   u32 little-endian header length | UTF-8 JSON header | float32 LE payload
// The header's "tensors" array lists {name, shape} for the payload blocks in
// order. Requests carry an "op" of "handshake", "predict_noise" or
// "control_features"; responses carry "status" ("ok" or "error").
#pragma once

#include "splatedit/guidance.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace splatedit {

namespace wire {

struct Tensor {
    std::string name;
    Image value;
};

struct Frame {
    nlohmann::json header = nlohmann::json::object();
    std::vector<Tensor> tensors;

    /// Named tensor; throws FormatError when absent.
    const Image &tensor(std::string_view name) const;
};

/// Serializes a frame; the tensor list is written into header["tensors"].
std::string encode(const Frame &frame);
/// Parses one complete frame. Throws FormatError on malformed input.
Frame decode(std::string_view bytes);

} // namespace wire

struct RemotePriorConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    int timeout_ms = 30000; ///< per connect / send / receive
    int retries = 2;        ///< extra attempts after a transport failure
    int max_in_flight = 4;

    /// Accepts "tcp://host:port" or "host:port". Throws ConfigError.
    static RemotePriorConfig from_endpoint(const std::string &endpoint);
};

/// Client side. The constructor performs the handshake, which supplies the
/// noise schedule and latent codec. Transport failures that persist after the
/// configured retries, and server-reported errors, raise GuidanceUnavailableError.
class RemotePrior final : public DiffusionPrior, public ControlProvider {
public:
    explicit RemotePrior(RemotePriorConfig config);

    const NoiseSchedule &schedule() const override { return schedule_; }
    const LatentCodec &codec() const override { return codec_; }
    Image predict_noise(const Image &x_t, int t, const ConditionBundle &cond) const override;
    ControlFeatures control_features(const Image &x_t, int t,
                                     const ConditionBundle &cond) const override;

    std::size_t requests_sent() const noexcept { return requests_sent_.load(); }

private:
    wire::Frame call(const wire::Frame &request) const;

    RemotePriorConfig config_;
    NoiseSchedule schedule_;
    LatentCodec codec_;
    mutable std::counting_semaphore<1024> in_flight_;
    mutable std::atomic<std::size_t> requests_sent_{0};
};

/// Serves a local prior (and optional control provider) on 127.0.0.1.
class PriorServer {
public:
    /// port 0 picks a free port. Throws IoError when the socket cannot be bound.
    PriorServer(const DiffusionPrior &prior, const ControlProvider *control = nullptr,
                int port = 0);
    ~PriorServer();
    PriorServer(const PriorServer &) = delete;
    PriorServer &operator=(const PriorServer &) = delete;

    int port() const noexcept { return port_; }
    std::string endpoint() const;
    std::size_t requests_served() const noexcept { return served_.load(); }
    /// Peak number of requests handled at once.
    std::size_t peak_concurrency() const noexcept { return peak_.load(); }
    void stop();

private:
    void accept_loop();
    void serve_connection(int fd);
    wire::Frame handle(const wire::Frame &request) const;

    const DiffusionPrior &prior_;
    const ControlProvider *control_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> served_{0};
    std::atomic<std::size_t> active_{0};
    std::atomic<std::size_t> peak_{0};
    struct Worker {
        std::shared_ptr<std::atomic<bool>> done;
        std::jthread thread;
    };
    std::vector<Worker> workers_;
    std::mutex workers_mutex_;
    std::jthread acceptor_;
};

/// Header fields of a bundle (text, pose, present keys) and its image tensors.
void append_bundle(wire::Frame &frame, const ConditionBundle &cond);
ConditionBundle read_bundle(const wire::Frame &frame);

} // namespace splatedit

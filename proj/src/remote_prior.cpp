// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/remote_prior.hpp"

#include "splatedit/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <charconv>
#include <cstring>

namespace splatedit {

static_assert(std::endian::native == std::endian::little,
              "wire format assumes a little-endian host");

namespace wire {

const Image &Frame::tensor(std::string_view name) const {
    for (const auto &t : tensors) {
        if (t.name == name) {
            return t.value;
        }
    }
    throw FormatError(fmt::format("frame has no tensor '{}'", name));
}

std::string encode(const Frame &frame) {
    nlohmann::json header = frame.header;
    header["tensors"] = nlohmann::json::array();
    std::size_t floats = 0;
    for (const auto &t : frame.tensors) {
        header["tensors"].push_back(
            {{"name", t.name},
             {"shape", {t.value.channels(), t.value.height(), t.value.width()}}});
        floats += t.value.size();
    }
    const std::string text = header.dump();
    const auto length = static_cast<std::uint32_t>(text.size());
    std::string out(sizeof(length) + text.size() + floats * sizeof(float), '\0');
    std::memcpy(out.data(), &length, sizeof(length));
    std::memcpy(out.data() + sizeof(length), text.data(), text.size());
    char *cursor = out.data() + sizeof(length) + text.size();
    for (const auto &t : frame.tensors) {
        for (double v : t.value.data()) {
            const auto f = static_cast<float>(v);
            std::memcpy(cursor, &f, sizeof(f));
            cursor += sizeof(f);
        }
    }
    return out;
}

namespace {

std::size_t payload_floats(const nlohmann::json &header) {
    std::size_t total = 0;
    if (!header.contains("tensors")) {
        return 0;
    }
    for (const auto &t : header.at("tensors")) {
        const auto &shape = t.at("shape");
        if (!shape.is_array() || shape.size() != 3) {
            throw FormatError("tensor shape must have 3 entries");
        }
        std::size_t n = 1;
        for (const auto &d : shape) {
            const long long v = d.get<long long>();
            if (v < 0 || v > (1 << 20)) {
                throw FormatError(fmt::format("tensor dimension {} out of range", v));
            }
            n *= static_cast<std::size_t>(v);
        }
        total += n;
    }
    return total;
}

} // namespace

Frame decode(std::string_view bytes) {
    std::uint32_t length = 0;
    if (bytes.size() < sizeof(length)) {
        throw FormatError("frame shorter than its length prefix");
    }
    std::memcpy(&length, bytes.data(), sizeof(length));
    if (bytes.size() < sizeof(length) + length) {
        throw FormatError("frame header truncated");
    }
    Frame frame;
    try {
        frame.header = nlohmann::json::parse(bytes.substr(sizeof(length), length));
        const std::size_t floats = payload_floats(frame.header);
        const std::string_view payload = bytes.substr(sizeof(length) + length);
        if (payload.size() != floats * sizeof(float)) {
            throw FormatError(fmt::format("frame payload has {} bytes, header declares {}",
                                          payload.size(), floats * sizeof(float)));
        }
        const char *cursor = payload.data();
        if (frame.header.contains("tensors")) {
            for (const auto &t : frame.header.at("tensors")) {
                const auto &shape = t.at("shape");
                Image img(shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>());
                for (double &v : img.data()) {
                    float f;
                    std::memcpy(&f, cursor, sizeof(f));
                    cursor += sizeof(f);
                    v = f;
                }
                frame.tensors.push_back({t.at("name").get<std::string>(), std::move(img)});
            }
        }
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(fmt::format("malformed frame header: {}", e.what()));
    }
    return frame;
}

} // namespace wire

namespace {

/// Owns a socket descriptor.
class Socket {
public:
    explicit Socket(int fd = -1) : fd_(fd) {}
    ~Socket() {
        if (fd_ >= 0) {
            ::close(fd_);
        }
    }
    Socket(Socket &&other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket &operator=(Socket &&) = delete;
    int get() const noexcept { return fd_; }

private:
    int fd_;
};

/// Transport failure; retried by the client.
struct TransportError : Error {
    using Error::Error;
};

void set_timeouts(int fd, int timeout_ms) {
    timeval tv{};
    tv.tv_sec = timeout_ms / 1000;
    tv.tv_usec = (timeout_ms % 1000) * 1000;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

void send_all(int fd, std::string_view bytes) {
    while (!bytes.empty()) {
        const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) {
                continue;
            }
            throw TransportError(fmt::format("send failed: {}", std::strerror(errno)));
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

/// Reads exactly `size` bytes; returns false on a clean EOF before the first byte.
bool recv_exact(int fd, char *out, std::size_t size, bool allow_eof) {
    std::size_t got = 0;
    while (got < size) {
        const ssize_t n = ::recv(fd, out + got, size - got, 0);
        if (n == 0) {
            if (allow_eof && got == 0) {
                return false;
            }
            throw TransportError("connection closed mid-frame");
        }
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw TransportError(errno == EAGAIN || errno == EWOULDBLOCK
                                     ? std::string("receive timed out")
                                     : fmt::format("receive failed: {}", std::strerror(errno)));
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

std::optional<wire::Frame> read_frame(int fd) {
    std::uint32_t length = 0;
    if (!recv_exact(fd, reinterpret_cast<char *>(&length), sizeof(length), true)) {
        return std::nullopt;
    }
    std::string bytes(sizeof(length) + length, '\0');
    std::memcpy(bytes.data(), &length, sizeof(length));
    recv_exact(fd, bytes.data() + sizeof(length), length, false);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(std::string_view(bytes).substr(sizeof(length)));
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(fmt::format("malformed frame header: {}", e.what()));
    }
    const std::size_t payload = wire::payload_floats(header) * sizeof(float);
    bytes.resize(bytes.size() + payload);
    recv_exact(fd, bytes.data() + sizeof(length) + length, payload, false);
    return wire::decode(bytes);
}

Socket connect_to(const std::string &host, int port, int timeout_ms) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo *result = nullptr;
    const std::string service = std::to_string(port);
    if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &result) != 0 || result == nullptr) {
        throw TransportError(fmt::format("cannot resolve '{}'", host));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(result, ::freeaddrinfo);

    Socket sock(::socket(result->ai_family, result->ai_socktype, result->ai_protocol));
    if (sock.get() < 0) {
        throw TransportError(fmt::format("socket failed: {}", std::strerror(errno)));
    }
    const int flags = ::fcntl(sock.get(), F_GETFL, 0);
    ::fcntl(sock.get(), F_SETFL, flags | O_NONBLOCK);
    if (::connect(sock.get(), result->ai_addr, result->ai_addrlen) != 0) {
        if (errno != EINPROGRESS) {
            throw TransportError(
                fmt::format("connect to {}:{} failed: {}", host, port, std::strerror(errno)));
        }
        pollfd pfd{sock.get(), POLLOUT, 0};
        if (::poll(&pfd, 1, timeout_ms) != 1) {
            throw TransportError(fmt::format("connect to {}:{} timed out", host, port));
        }
        int error = 0;
        socklen_t len = sizeof(error);
        ::getsockopt(sock.get(), SOL_SOCKET, SO_ERROR, &error, &len);
        if (error != 0) {
            throw TransportError(
                fmt::format("connect to {}:{} failed: {}", host, port, std::strerror(error)));
        }
    }
    ::fcntl(sock.get(), F_SETFL, flags);
    set_timeouts(sock.get(), timeout_ms);
    const int one = 1;
    ::setsockopt(sock.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return sock;
}

void require_ok(const wire::Frame &reply) {
    const auto status = reply.header.value("status", std::string{});
    if (status != "ok") {
        throw GuidanceUnavailableError(fmt::format(
            "prior server error: {}", reply.header.value("message", std::string("no message"))));
    }
}

} // namespace

RemotePriorConfig RemotePriorConfig::from_endpoint(const std::string &endpoint) {
    std::string_view rest = endpoint;
    if (rest.starts_with("tcp://")) {
        rest.remove_prefix(6);
    }
    const auto colon = rest.rfind(':');
    RemotePriorConfig config;
    if (colon == std::string_view::npos || colon == 0 ||
        rest.substr(0, colon).find_first_of("/:") != std::string_view::npos) {
        throw ConfigError(fmt::format("prior endpoint '{}' is not host:port", endpoint));
    }
    config.host = std::string(rest.substr(0, colon));
    const std::string_view port = rest.substr(colon + 1);
    const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), config.port);
    if (ec != std::errc{} || ptr != port.data() + port.size() || config.port <= 0 ||
        config.port > 65535) {
        throw ConfigError(fmt::format("prior endpoint '{}' has an invalid port", endpoint));
    }
    return config;
}

void append_bundle(wire::Frame &frame, const ConditionBundle &cond) {
    frame.header["conditioning"] = cond.keys();
    if (cond.text_embedding) {
        frame.header["text_embedding"] = *cond.text_embedding;
    }
    if (cond.relative_pose) {
        frame.header["relative_pose"] = {{"azimuth", cond.relative_pose->azimuth_deg},
                                         {"elevation", cond.relative_pose->elevation_deg},
                                         {"radius", cond.relative_pose->radius}};
    }
    if (cond.reference_image) frame.tensors.push_back({"reference_image", *cond.reference_image});
    if (cond.depth) frame.tensors.push_back({"depth", *cond.depth});
    if (cond.bbox_mask) frame.tensors.push_back({"bbox_mask", *cond.bbox_mask});
    if (cond.masked_image_latents) {
        frame.tensors.push_back({"masked_image_latents", *cond.masked_image_latents});
    }
    if (cond.control) {
        frame.header["control_down"] = cond.control->down.size();
        for (std::size_t i = 0; i < cond.control->down.size(); ++i) {
            frame.tensors.push_back({fmt::format("control.down.{}", i), cond.control->down[i]});
        }
        frame.tensors.push_back({"control.mid", cond.control->mid});
    }
}

ConditionBundle read_bundle(const wire::Frame &frame) {
    ConditionBundle cond;
    const auto &h = frame.header;
    const auto keys = h.value("conditioning", std::vector<std::string>{});
    auto has = [&](const char *key) { return std::find(keys.begin(), keys.end(), key) != keys.end(); };
    if (has("text_embedding")) cond.text_embedding = h.at("text_embedding").get<std::string>();
    if (has("relative_pose")) {
        const auto &p = h.at("relative_pose");
        cond.relative_pose = OrbitCoordinates{p.at("azimuth").get<double>(),
                                              p.at("elevation").get<double>(),
                                              p.at("radius").get<double>()};
    }
    if (has("reference_image")) cond.reference_image = frame.tensor("reference_image");
    if (has("depth")) cond.depth = frame.tensor("depth");
    if (has("bbox_mask")) cond.bbox_mask = frame.tensor("bbox_mask");
    if (has("masked_image_latents")) cond.masked_image_latents = frame.tensor("masked_image_latents");
    if (has("control")) {
        ControlFeatures control;
        const auto down = h.at("control_down").get<std::size_t>();
        for (std::size_t i = 0; i < down; ++i) {
            control.down.push_back(frame.tensor(fmt::format("control.down.{}", i)));
        }
        control.mid = frame.tensor("control.mid");
        cond.control = std::move(control);
    }
    return cond;
}

RemotePrior::RemotePrior(RemotePriorConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 1024)) {
    if (config_.max_in_flight < 1 || config_.max_in_flight > 1024) {
        throw InvalidParameterError(
            fmt::format("max_in_flight must be in [1, 1024], got {}", config_.max_in_flight));
    }
    wire::Frame request;
    request.header["op"] = "handshake";
    const wire::Frame reply = call(request);
    try {
        schedule_ = NoiseSchedule(
            reply.header.at("schedule").at("alphas_cumprod").get<std::vector<double>>());
        const auto &latent = reply.header.at("latent");
        const int channels = latent.at("channels").get<int>();
        const int downsample = latent.at("downsample").get<int>();
        Eigen::MatrixXd matrix = Eigen::MatrixXd::Identity(channels, 3);
        Eigen::VectorXd bias = Eigen::VectorXd::Zero(channels);
        if (latent.contains("matrix")) {
            const auto rows = latent.at("matrix").get<std::vector<std::vector<double>>>();
            for (int r = 0; r < channels; ++r) {
                for (int c = 0; c < 3; ++c) {
                    matrix(r, c) = rows.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c));
                }
            }
        }
        if (latent.contains("bias")) {
            const auto b = latent.at("bias").get<std::vector<double>>();
            for (int r = 0; r < channels; ++r) {
                bias[r] = b.at(static_cast<std::size_t>(r));
            }
        }
        codec_ = LatentCodec(matrix, bias, downsample);
    } catch (const nlohmann::json::exception &e) {
        throw GuidanceUnavailableError(fmt::format("malformed handshake: {}", e.what()));
    } catch (const std::out_of_range &e) {
        throw GuidanceUnavailableError(fmt::format("malformed handshake: {}", e.what()));
    } catch (const InvalidParameterError &e) {
        throw GuidanceUnavailableError(fmt::format("unusable handshake: {}", e.what()));
    }
    spdlog::info("connected to prior at {}:{} ({} timesteps, {} latent channels, /{})",
                 config_.host, config_.port, schedule_.size(), codec_.latent_channels(),
                 codec_.downsample());
}

wire::Frame RemotePrior::call(const wire::Frame &request) const {
    const std::string bytes = wire::encode(request);
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<1024> &sem;
        ~Release() { sem.release(); }
    } release{in_flight_};

    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        try {
            Socket sock = connect_to(config_.host, config_.port, config_.timeout_ms);
            send_all(sock.get(), bytes);
            ++requests_sent_;
            auto reply = read_frame(sock.get());
            if (!reply) {
                throw TransportError("server closed the connection without replying");
            }
            require_ok(*reply);
            return std::move(*reply);
        } catch (const TransportError &e) {
            last_error = e.what();
            spdlog::warn("prior request failed (attempt {}/{}): {}", attempt + 1,
                         config_.retries + 1, last_error);
        } catch (const FormatError &e) {
            throw GuidanceUnavailableError(fmt::format("bad reply from prior: {}", e.what()));
        }
    }
    throw GuidanceUnavailableError(fmt::format("prior at {}:{} unavailable after {} attempts: {}",
                                               config_.host, config_.port, config_.retries + 1,
                                               last_error));
}

Image RemotePrior::predict_noise(const Image &x_t, int t, const ConditionBundle &cond) const {
    wire::Frame request;
    request.header["op"] = "predict_noise";
    request.header["t"] = t;
    request.tensors.push_back({"x_t", x_t});
    append_bundle(request, cond);
    const wire::Frame reply = call(request);
    try {
        return reply.tensor("eps");
    } catch (const FormatError &e) {
        throw GuidanceUnavailableError(e.what());
    }
}

ControlFeatures RemotePrior::control_features(const Image &x_t, int t,
                                              const ConditionBundle &cond) const {
    wire::Frame request;
    request.header["op"] = "control_features";
    request.header["t"] = t;
    request.tensors.push_back({"x_t", x_t});
    append_bundle(request, cond);
    const wire::Frame reply = call(request);
    try {
        return read_bundle(reply).control.value_or(ControlFeatures{});
    } catch (const std::exception &e) {
        throw GuidanceUnavailableError(fmt::format("bad control reply: {}", e.what()));
    }
}

PriorServer::PriorServer(const DiffusionPrior &prior, const ControlProvider *control, int port)
    : prior_(prior), control_(control) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) {
        throw IoError(fmt::format("socket failed: {}", std::strerror(errno)));
    }
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
        const std::string reason = std::strerror(errno);
        ::close(listen_fd_);
        throw IoError(fmt::format("cannot listen on port {}: {}", port, reason));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::jthread([this] { accept_loop(); });
}

PriorServer::~PriorServer() { stop(); }

std::string PriorServer::endpoint() const { return fmt::format("tcp://127.0.0.1:{}", port_); }

void PriorServer::stop() {
    if (stopping_.exchange(true)) {
        return;
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::lock_guard lock(workers_mutex_);
    workers_.clear();
}

void PriorServer::accept_loop() {
    while (!stopping_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) {
                continue;
            }
            return;
        }
        std::lock_guard lock(workers_mutex_);
        std::erase_if(workers_, [](const Worker &w) { return w.done->load(); });
        auto done = std::make_shared<std::atomic<bool>>(false);
        workers_.push_back({done, std::jthread([this, fd, done] {
                                serve_connection(fd);
                                done->store(true);
                            })});
    }
}

void PriorServer::serve_connection(int fd) {
    Socket sock(fd);
    set_timeouts(fd, 5000);
    try {
        while (!stopping_) {
            auto request = read_frame(fd);
            if (!request) {
                return;
            }
            const std::size_t now = ++active_;
            std::size_t peak = peak_.load();
            while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
            }
            wire::Frame reply;
            try {
                reply = handle(*request);
                reply.header["status"] = "ok";
            } catch (const std::exception &e) {
                reply = wire::Frame{};
                reply.header["status"] = "error";
                reply.header["message"] = e.what();
            }
            --active_;
            ++served_;
            send_all(fd, wire::encode(reply));
        }
    } catch (const std::exception &e) {
        spdlog::debug("prior server connection closed: {}", e.what());
    }
}

wire::Frame PriorServer::handle(const wire::Frame &request) const {
    const std::string op = request.header.value("op", std::string{});
    wire::Frame reply;
    if (op == "handshake") {
        const LatentCodec &codec = prior_.codec();
        std::vector<std::vector<double>> matrix;
        for (int r = 0; r < codec.latent_channels(); ++r) {
            matrix.push_back({codec.matrix()(r, 0), codec.matrix()(r, 1), codec.matrix()(r, 2)});
        }
        std::vector<double> bias(codec.bias().data(), codec.bias().data() + codec.bias().size());
        reply.header["schedule"] = {{"length", prior_.schedule().size()},
                                    {"alphas_cumprod", prior_.schedule().alphas_cumprod()}};
        reply.header["latent"] = {{"channels", codec.latent_channels()},
                                  {"downsample", codec.downsample()},
                                  {"matrix", matrix},
                                  {"bias", bias}};
        return reply;
    }
    const int t = request.header.at("t").get<int>();
    const ConditionBundle cond = read_bundle(request);
    if (op == "predict_noise") {
        reply.tensors.push_back({"eps", prior_.predict_noise(request.tensor("x_t"), t, cond)});
        return reply;
    }
    if (op == "control_features") {
        ConditionBundle out;
        out.control = control_ != nullptr
                          ? control_->control_features(request.tensor("x_t"), t, cond)
                          : ControlFeatures{};
        append_bundle(reply, out);
        return reply;
    }
    throw FormatError(fmt::format("unknown op '{}'", op));
}

} // namespace splatedit

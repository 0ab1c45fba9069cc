#pragma once

#include <boost/asio.hpp>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "lens/edge.hpp"

namespace lens::detail {

/// Cloud inference listener: one FramePipeline per connected camera.
class InferServer {
public:
    InferServer(std::shared_ptr<const ModelBundle> bundle, const std::string& host, int port);
    ~InferServer();
    void start();
    void stop();
    int port() const { return port_; }
    std::size_t connections() const { return connections_; }

private:
    void accept_loop();
    void serve(std::shared_ptr<boost::asio::ip::tcp::socket> socket);

    std::shared_ptr<const ModelBundle> bundle_;
    boost::asio::io_context io_;
    boost::asio::ip::tcp::acceptor acceptor_;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> connections_{0};
    std::mutex mu_;
    std::vector<std::shared_ptr<boost::asio::ip::tcp::socket>> sockets_;
    std::vector<std::thread> workers_;
    std::thread accept_thread_;
};

}  // namespace lens::detail

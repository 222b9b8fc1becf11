#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace testsupport {

/// Loopback TCP server on an ephemeral port. Each connection gets its own thread running
/// the handler; the destructor shuts every socket down and joins.
class TcpServer {
 public:
  using Handler = std::function<void(int fd)>;

  explicit TcpServer(Handler handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  int port() const noexcept { return port_; }
  int connections() const noexcept { return connections_.load(); }

 private:
  void accept_loop();

  Handler handler_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<int> connections_{0};
  std::mutex mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> workers_;
  std::thread acceptor_;
};

void send_all(int fd, const std::string& data);

/// Sends `banner`, then echoes every received line back with a trailing newline.
TcpServer::Handler echo_handler(std::string banner = {});
/// Never writes; holds the connection until the peer goes away.
TcpServer::Handler silent_handler();
/// Sends `message` and closes.
TcpServer::Handler closing_handler(std::string message);

std::filesystem::path fixtures_dir();
std::filesystem::path assets_dir();
std::filesystem::path puffin_manifest();
/// Empty scratch directory under the build tree.
std::filesystem::path fresh_dir(const std::string& name);

}  // namespace testsupport

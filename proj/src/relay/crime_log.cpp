#include <cstdio>
#include <fstream>
#include <future>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include "lens/error.hpp"
#include "lens/relay.hpp"

namespace lens {

using nlohmann::json;

struct CrimeLog::Request {
    CrimeLogEntry entry;
    std::promise<AppendResult> done;
};

CrimeLog::CrimeLog(std::filesystem::path file, std::size_t queue_capacity, AppendHook on_append)
    : file_(std::move(file)), on_append_(std::move(on_append)), queue_(queue_capacity) {
    auto entries = std::make_shared<std::vector<CrimeLogEntry>>();
    if (std::filesystem::exists(file_)) {
        std::ifstream in(file_);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                CrimeLogEntry e = entry_from_json(json::parse(line));
                if (index_.count(e.event.event_id)) continue;
                index_[e.event.event_id] = entries->size();
                entries->push_back(std::move(e));
            } catch (const std::exception& ex) {
                spdlog::warn("crime log {} line {} unreadable, skipped: {}", file_.string(), line_no, ex.what());
            }
        }
        spdlog::info("crime log: restored {} entries from {}", entries->size(), file_.string());
    } else if (file_.has_parent_path()) {
        std::filesystem::create_directories(file_.parent_path());
    }
    snapshot_ = std::move(entries);
    thread_ = std::thread([this] { writer(); });
}

CrimeLog::~CrimeLog() {
    queue_.close();
    thread_.join();
}

CrimeLog::AppendResult CrimeLog::append(CrimeLogEntry entry) {
    auto req = std::make_shared<Request>();
    req->entry = std::move(entry);
    auto fut = req->done.get_future();
    if (!queue_.push(req)) throw Error("crime log is closed");
    return fut.get();
}

CrimeLog::Snapshot CrimeLog::snapshot() const { return std::atomic_load(&snapshot_); }

std::optional<CrimeLogEntry> CrimeLog::find(const std::string& event_id) const {
    const auto snap = snapshot();
    for (const auto& e : *snap)
        if (e.event.event_id == event_id) return e;
    return std::nullopt;
}

void CrimeLog::writer() {
    std::FILE* out = std::fopen(file_.c_str(), "ab");
    if (!out) spdlog::error("crime log: cannot open {} for append", file_.string());
    while (auto req = queue_.pop()) {
        try {
            const auto& id = (*req)->entry.event.event_id;
            const auto current = std::atomic_load(&snapshot_);
            if (auto it = index_.find(id); it != index_.end()) {
                (*req)->done.set_value({false, (*current)[it->second]});
                continue;
            }
            if (!out) throw Error("crime log file is not writable");
            const std::string line = entry_to_json((*req)->entry).dump() + "\n";
            if (std::fwrite(line.data(), 1, line.size(), out) != line.size() || std::fflush(out) != 0)
                throw Error("crime log write failed");
            ::fsync(fileno(out));
            auto next = std::make_shared<std::vector<CrimeLogEntry>>(*current);
            index_[id] = next->size();
            next->push_back((*req)->entry);
            std::atomic_store(&snapshot_, Snapshot(std::move(next)));
            if (on_append_) on_append_((*req)->entry);
            (*req)->done.set_value({true, (*req)->entry});
        } catch (...) {
            (*req)->done.set_exception(std::current_exception());
        }
    }
    if (out) std::fclose(out);
}

}  // namespace lens

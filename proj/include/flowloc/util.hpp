#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace flowloc {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v);

// Runs fn(i) for i in [0, n) on up to n_threads workers. Work is split into
// contiguous chunks so results written to pre-sized output slots stay
// deterministic regardless of the thread count.
void parallel_for(std::size_t n, unsigned n_threads, const std::function<void(std::size_t)>& fn);

unsigned default_thread_count();

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace flowloc

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace etbert {

using bytes_t = std::vector<uint8_t>;

std::string hex_encode(std::span<const uint8_t> data);
bytes_t hex_decode(const std::string& hex);  // throws MalformedRecord

// shell-style match with * and ?
bool glob_match(const std::string& pattern, const std::string& text);

// Worker count for parallel_for: ETB_THREADS if set, else hardware threads.
size_t thread_count();

// Splits [0, n) into one contiguous chunk per worker. Callers that need
// run-to-run determinism must make per-index results order independent or
// reduce per-chunk results themselves in chunk order.
void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body);

std::string read_file(const std::string& path);              // throws IoError
void atomic_write_file(const std::string& path, std::string_view content);

}  // namespace etbert

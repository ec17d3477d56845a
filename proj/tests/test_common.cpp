#include <atomic>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "etbert/common.hpp"
#include "etbert/errors.hpp"

using namespace etbert;
namespace fs = std::filesystem;

TEST_CASE("hex round trip") {
  bytes_t data = {0x00, 0x01, 0xab, 0xff, 0x7f};
  std::string hex = hex_encode(data);
  CHECK(hex == "0001abff7f");
  CHECK(hex_decode(hex) == data);
  CHECK(hex_encode(bytes_t{}) == "");
  CHECK(hex_decode("").empty());
}

TEST_CASE("hex_decode rejects junk") {
  CHECK_THROWS_AS(hex_decode("abc"), MalformedRecord);   // odd length
  CHECK_THROWS_AS(hex_decode("zz"), MalformedRecord);    // non-hex digit
}

TEST_CASE("glob_match") {
  CHECK(glob_match("*", "anything"));
  CHECK(glob_match("*.pcap", "trace.pcap"));
  CHECK(!glob_match("*.pcap", "trace.pcapng"));
  CHECK(glob_match("cap?.pcap", "cap1.pcap"));
  CHECK(!glob_match("cap?.pcap", "cap12.pcap"));
  CHECK(glob_match("a*b*c", "axxbyyc"));
  CHECK(!glob_match("a*b*c", "axxbyy"));
  CHECK(glob_match("", ""));
  CHECK(!glob_match("", "x"));
}

TEST_CASE("parallel_for covers the range exactly once") {
  const size_t n = 10007;
  std::vector<std::atomic<int>> hits(n);
  parallel_for(n, [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; i++) hits[i]++;
  });
  for (size_t i = 0; i < n; i++) CHECK(hits[i].load() == 1);
}

TEST_CASE("parallel_for with an empty range does nothing") {
  bool called = false;
  parallel_for(0, [&](size_t, size_t) { called = true; });
  CHECK(!called);
}

TEST_CASE("thread_count is at least one") { CHECK(thread_count() >= 1); }

TEST_CASE("atomic_write_file then read_file round trips") {
  fs::path p = fs::temp_directory_path() / "etbert_common_test.bin";
  std::string full("line1\nline2\0binary", 18);
  atomic_write_file(p.string(), full);
  CHECK(read_file(p.string()) == full);
  atomic_write_file(p.string(), "shorter");  // overwrite truncates
  CHECK(read_file(p.string()) == "shorter");
  fs::remove(p);
}

TEST_CASE("read_file on a missing path throws IoError") {
  CHECK_THROWS_AS(read_file("/nonexistent/etbert/nope.bin"), IoError);
}

TEST_CASE("error classes carry their exit codes") {
  CHECK(UsageError("x").code() == ExitCode::usage);
  CHECK(IoError("x").code() == ExitCode::io);
  CHECK(MalformedRecord("x").code() == ExitCode::malformed);
  CHECK(ShapeMismatch("x").code() == ExitCode::incompatible);
  CHECK(TooShort("x").code() == ExitCode::insufficient);
  CHECK(InternalError("x").code() == ExitCode::internal);
}

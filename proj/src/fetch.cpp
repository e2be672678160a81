// Copyright (c) 2026, the geossl authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "geossl/fetch.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include "geossl/error.hpp"
#include "geossl/rng.hpp"

namespace geossl {

namespace {

double steady_now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void real_sleep_s(double s) {
  if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

}  // namespace

RateLimiter::RateLimiter(double rate_per_s, NowFn now, SleepFn sleep)
    : rate_(rate_per_s),
      now_(now ? std::move(now) : NowFn(steady_now_s)),
      sleep_(sleep ? std::move(sleep) : SleepFn(real_sleep_s)) {
  if (rate_ < 0.0) throw ConfigError("rate limit must be >= 0");
}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  double t = now_();
  if (next_free_ <= 0.0) next_free_ = t;  // first token is free
  if (t < next_free_) {
    sleep_(next_free_ - t);
    t = next_free_;
  }
  next_free_ = std::max(next_free_, t) + 1.0 / rate_;
}

UrlParts parse_url(const std::string& url) {
  UrlParts parts;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL missing scheme: " + url);
  parts.scheme = url.substr(0, scheme_end);
  if (parts.scheme != "http" && parts.scheme != "https")
    throw ConfigError("unsupported URL scheme: " + parts.scheme);
  size_t host_start = scheme_end + 3;
  size_t path_start = url.find('/', host_start);
  std::string hostport = path_start == std::string::npos ? url.substr(host_start)
                                                         : url.substr(host_start, path_start - host_start);
  parts.path_query = path_start == std::string::npos ? "/" : url.substr(path_start);
  auto colon = hostport.rfind(':');
  if (colon != std::string::npos) {
    parts.host = hostport.substr(0, colon);
    parts.port = std::stoi(hostport.substr(colon + 1));
  } else {
    parts.host = hostport;
    parts.port = parts.scheme == "https" ? 443 : 80;
  }
  if (parts.host.empty()) throw ConfigError("URL missing host: " + url);
  return parts;
}

std::filesystem::path tile_cache_path(const std::string& url,
                                      const std::filesystem::path& cache_dir) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(url)));
  return cache_dir / (std::string(buf) + ".png");
}

namespace {

struct GetResult {
  bool transport_ok = false;
  int status = 0;
  std::string body;
};

GetResult http_get(const UrlParts& u) {
  GetResult r;
  if (u.scheme == "https") {
    httplib::SSLClient cli(u.host, u.port);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(30);
    auto res = cli.Get(u.path_query);
    if (res) {
      r.transport_ok = true;
      r.status = res->status;
      r.body = res->body;
    }
  } else {
    httplib::Client cli(u.host, u.port);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(30);
    auto res = cli.Get(u.path_query);
    if (res) {
      r.transport_ok = true;
      r.status = res->status;
      r.body = res->body;
    }
  }
  return r;
}

}  // namespace

Image fetch_tile(const std::string& url, const std::filesystem::path& cache_dir,
                 const FetchOptions& opts) {
  if (cache_dir.empty()) throw ConfigError("fetch_tile requires a cache directory");
  std::filesystem::create_directories(cache_dir);
  auto cache = tile_cache_path(url, cache_dir);

  if (std::filesystem::exists(cache)) {
    std::ifstream is(cache, std::ios::binary);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
      return decode_png(bytes);
    } catch (const Error&) {
      std::filesystem::remove(cache);
      throw Error("corrupt cached tile removed: " + cache.string());
    }
  }

  UrlParts parts = parse_url(url);
  RateLimiter local_limiter(opts.rate_limit_rps);
  RateLimiter* limiter = opts.limiter ? opts.limiter : &local_limiter;
  auto sleep = opts.sleep ? opts.sleep : real_sleep_s;
  if (opts.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");

  int last_status = 0;
  double backoff = opts.backoff_initial_s;
  for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
    if (attempt > 0) {
      sleep(backoff);
      backoff *= 2.0;
    }
    limiter->acquire();
    GetResult r = http_get(parts);
    if (!r.transport_ok) {
      last_status = 0;
      continue;
    }
    last_status = r.status;
    if (r.status < 200 || r.status >= 300) continue;

    std::vector<uint8_t> bytes(r.body.begin(), r.body.end());
    // Store first, then decode, so a decode failure leaves no bad entry.
    std::filesystem::path tmp = cache;
    tmp += ".part";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      os.write(r.body.data(), static_cast<std::streamsize>(r.body.size()));
      if (!os) throw IoError("tile cache write failed: " + tmp.string());
    }
    try {
      Image img = decode_png(bytes);
      std::filesystem::rename(tmp, cache);
      return img;
    } catch (const Error&) {
      std::filesystem::remove(tmp);
      throw Error("fetched tile failed to decode: " + url);
    }
  }
  throw FetchError("fetch failed after " + std::to_string(opts.max_attempts) + " attempts: " + url,
                   last_status);
}

}  // namespace geossl

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

#pragma once

#include <functional>
#include <string>

#include "geossl/image.hpp"

namespace geossl {

/// Token bucket with a single-token burst: the first acquire is immediate,
/// later ones are spaced by 1/rate seconds. Clock and sleeper are injectable
/// for tests.
class RateLimiter {
 public:
  using NowFn = std::function<double()>;
  using SleepFn = std::function<void(double)>;

  explicit RateLimiter(double rate_per_s, NowFn now = {}, SleepFn sleep = {});

  /// Blocks until the next token is available. No-op when rate is 0.
  void acquire();

  double rate() const { return rate_; }

 private:
  double rate_;
  double next_free_ = 0.0;
  NowFn now_;
  SleepFn sleep_;
};

struct FetchOptions {
  double rate_limit_rps = 0.0;  // 0 disables limiting
  int max_attempts = 3;
  double backoff_initial_s = 0.25;  // doubles per retry
  RateLimiter* limiter = nullptr;   // optional shared limiter
  std::function<void(double)> sleep;  // injectable backoff sleeper
};

struct UrlParts {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path_query;
};

UrlParts parse_url(const std::string& url);

/// Returns the cached tile if present; otherwise fetches the URL, stores the
/// body as a PNG in the cache (atomic rename) and decodes it. Retries with
/// exponential backoff; a FetchError carries the final HTTP status. Corrupt
/// cache entries are deleted before the error is raised.
Image fetch_tile(const std::string& url, const std::filesystem::path& cache_dir,
                 const FetchOptions& opts = {});

/// Cache location used by fetch_tile for a URL.
std::filesystem::path tile_cache_path(const std::string& url,
                                      const std::filesystem::path& cache_dir);

}  // namespace geossl

/*
 * Copyright 2026 The prunekit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PRUNEKIT_PARALLEL_HPP_
#define PRUNEKIT_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace prunekit {

// Worker count from PRUNEKIT_THREADS (read once). 0 selects the
// single-threaded reference path; unset means hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t threads);

// Runs fn(i) for every i in [0, n). Work items must write disjoint outputs;
// callers keep any cross-item reduction outside, in a fixed order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace prunekit

#endif  // PRUNEKIT_PARALLEL_HPP_

/*
 * Copyright 2026 The roast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstddef>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace roast::parallel {

inline int& thread_cap() {
  static int cap = 0;  // 0 = runtime default
  return cap;
}

/// Caps the worker count used by every parallel region in the library.
inline void set_threads(int n) {
  thread_cap() = std::max(0, n);
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#endif
}

inline int num_threads() {
#if defined(_OPENMP)
  return thread_cap() > 0 ? thread_cap() : omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace roast::parallel

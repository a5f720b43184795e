/* Copyright 2026 The siftmoe Authors
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

#include "siftmoe/channel.hpp"
#include "siftmoe/cost.hpp"
#include "siftmoe/error_budget.hpp"
#include "siftmoe/fastfading.hpp"
#include "siftmoe/harness/config.hpp"
#include "siftmoe/harness/report.hpp"
#include "siftmoe/harness/runner.hpp"
#include "siftmoe/harness/scenario.hpp"
#include "siftmoe/harness/traces.hpp"
#include "siftmoe/harness/validate.hpp"
#include "siftmoe/selection.hpp"

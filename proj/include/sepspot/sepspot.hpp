// Copyright (c) 2026 The sepspot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "sepspot/autograd.hpp"
#include "sepspot/bench.hpp"
#include "sepspot/config.hpp"
#include "sepspot/encoder.hpp"
#include "sepspot/features.hpp"
#include "sepspot/head.hpp"
#include "sepspot/metrics.hpp"
#include "sepspot/model.hpp"
#include "sepspot/ops.hpp"
#include "sepspot/parallel.hpp"
#include "sepspot/records.hpp"
#include "sepspot/search.hpp"
#include "sepspot/synth.hpp"
#include "sepspot/tensor.hpp"
#include "sepspot/training.hpp"

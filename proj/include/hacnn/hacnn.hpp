// Copyright 2026 The hacnn Authors.
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

#include "hacnn/attention.hpp"
#include "hacnn/checkpoint.hpp"
#include "hacnn/cli.hpp"
#include "hacnn/config.hpp"
#include "hacnn/data.hpp"
#include "hacnn/gradcheck.hpp"
#include "hacnn/gradcheck_suites.hpp"
#include "hacnn/layers.hpp"
#include "hacnn/network.hpp"
#include "hacnn/ops.hpp"
#include "hacnn/optim.hpp"
#include "hacnn/random.hpp"
#include "hacnn/reid_eval.hpp"
#include "hacnn/runtime.hpp"
#include "hacnn/tensor.hpp"
#include "hacnn/training.hpp"
#include "hacnn/visualize.hpp"

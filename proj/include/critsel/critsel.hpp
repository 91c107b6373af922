/*
 * Copyright 2026 The critsel Authors
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

// Core library. The HTTP transport and command-line front end live in
// critsel/http_transport.hpp and critsel/cli.hpp and need the vendored
// single-header dependencies.

#include "critsel/ablation.hpp"
#include "critsel/config.hpp"
#include "critsel/environment.hpp"
#include "critsel/error.hpp"
#include "critsel/ingest.hpp"
#include "critsel/io.hpp"
#include "critsel/mask_emitter.hpp"
#include "critsel/maze.hpp"
#include "critsel/parallel.hpp"
#include "critsel/random.hpp"
#include "critsel/selector_baselines.hpp"
#include "critsel/selector_llm.hpp"
#include "critsel/toy_trainer.hpp"
#include "critsel/trajectory.hpp"
#include "critsel/value_selector.hpp"

/*
 * Copyright 2026 The noisylab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "noisylab/errors.hpp"
#include "noisylab/matrix.hpp"
#include "noisylab/tape.hpp"
#include "noisylab/gradcheck.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/io.hpp"
#include "noisylab/synth.hpp"
#include "noisylab/labels.hpp"
#include "noisylab/losses.hpp"
#include "noisylab/model.hpp"
#include "noisylab/trainer.hpp"

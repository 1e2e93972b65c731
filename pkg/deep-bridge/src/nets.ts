/**
 * The three classic classification backbones, built up to their penultimate
 * layer (the features we tap): VGG16 fc2 (4096), ResNet50 global average
 * pool (2048), AlexNet fc2 (4096).
 *
 * Stock pretrained weights cannot be downloaded in this environment, so by
 * default every weight tensor is filled deterministically from a seeded
 * PRNG with He-uniform scaling: extraction stays reproducible bit for bit
 * and the wire contract (dimensionality, schema, determinism) is fully
 * exercised. A directory of real weights can be supplied per weight name
 * to swap in pretrained parameters (see loadWeightsFromDir).
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export interface Backbone {
  model: tf.LayersModel
  inputSize: number
  dim: number
}

export const ARCHS = ['vgg16', 'resnet50', 'alexnet'] as const
export type ArchName = (typeof ARCHS)[number]

function convBnRelu(
  x: tf.SymbolicTensor,
  filters: number,
  kernel: number,
  stride: number,
  name: string
): tf.SymbolicTensor {
  let out = tf.layers
    .conv2d({ filters, kernelSize: kernel, strides: stride, padding: 'same', useBias: false, name: `${name}_conv` })
    .apply(x) as tf.SymbolicTensor
  out = tf.layers.batchNormalization({ name: `${name}_bn` }).apply(out) as tf.SymbolicTensor
  return tf.layers.reLU({ name: `${name}_relu` }).apply(out) as tf.SymbolicTensor
}

function bottleneck(
  x: tf.SymbolicTensor,
  filters: [number, number, number],
  stride: number,
  project: boolean,
  name: string
): tf.SymbolicTensor {
  const [f1, f2, f3] = filters
  let out = convBnRelu(x, f1, 1, stride, `${name}_a`)
  out = convBnRelu(out, f2, 3, 1, `${name}_b`)
  out = tf.layers
    .conv2d({ filters: f3, kernelSize: 1, strides: 1, padding: 'same', useBias: false, name: `${name}_c_conv` })
    .apply(out) as tf.SymbolicTensor
  out = tf.layers.batchNormalization({ name: `${name}_c_bn` }).apply(out) as tf.SymbolicTensor

  let shortcut = x
  if (project) {
    shortcut = tf.layers
      .conv2d({ filters: f3, kernelSize: 1, strides: stride, padding: 'same', useBias: false, name: `${name}_proj_conv` })
      .apply(x) as tf.SymbolicTensor
    shortcut = tf.layers.batchNormalization({ name: `${name}_proj_bn` }).apply(shortcut) as tf.SymbolicTensor
  }
  const added = tf.layers.add({ name: `${name}_add` }).apply([out, shortcut]) as tf.SymbolicTensor
  return tf.layers.reLU({ name: `${name}_out` }).apply(added) as tf.SymbolicTensor
}

function buildResnet50(): Backbone {
  const input = tf.input({ shape: [224, 224, 3], name: 'input' })
  let x = convBnRelu(input, 64, 7, 2, 'stem')
  x = tf.layers.maxPooling2d({ poolSize: 3, strides: 2, padding: 'same', name: 'stem_pool' }).apply(x) as tf.SymbolicTensor
  const stages: Array<[number, [number, number, number], number]> = [
    [3, [64, 64, 256], 1],
    [4, [128, 128, 512], 2],
    [6, [256, 256, 1024], 2],
    [3, [512, 512, 2048], 2],
  ]
  stages.forEach(([blocks, filters, stride], stageIdx) => {
    for (let block = 0; block < blocks; block++) {
      x = bottleneck(
        x,
        filters,
        block === 0 ? stride : 1,
        block === 0,
        `stage${stageIdx + 2}_block${block + 1}`
      )
    }
  })
  x = tf.layers.globalAveragePooling2d({ name: 'avg_pool' }).apply(x) as tf.SymbolicTensor
  return { model: tf.model({ inputs: input, outputs: x, name: 'resnet50' }), inputSize: 224, dim: 2048 }
}

function buildVgg16(): Backbone {
  const input = tf.input({ shape: [224, 224, 3], name: 'input' })
  let x = input
  const blocks: Array<[number, number]> = [
    [2, 64],
    [2, 128],
    [3, 256],
    [3, 512],
    [3, 512],
  ]
  blocks.forEach(([convs, filters], blockIdx) => {
    for (let conv = 0; conv < convs; conv++) {
      x = tf.layers
        .conv2d({
          filters,
          kernelSize: 3,
          padding: 'same',
          activation: 'relu',
          name: `block${blockIdx + 1}_conv${conv + 1}`,
        })
        .apply(x) as tf.SymbolicTensor
    }
    x = tf.layers
      .maxPooling2d({ poolSize: 2, strides: 2, name: `block${blockIdx + 1}_pool` })
      .apply(x) as tf.SymbolicTensor
  })
  x = tf.layers.flatten({ name: 'flatten' }).apply(x) as tf.SymbolicTensor
  x = tf.layers.dense({ units: 4096, activation: 'relu', name: 'fc1' }).apply(x) as tf.SymbolicTensor
  x = tf.layers.dense({ units: 4096, activation: 'relu', name: 'fc2' }).apply(x) as tf.SymbolicTensor
  return { model: tf.model({ inputs: input, outputs: x, name: 'vgg16' }), inputSize: 224, dim: 4096 }
}

function buildAlexnet(): Backbone {
  const input = tf.input({ shape: [227, 227, 3], name: 'input' })
  let x = tf.layers
    .conv2d({ filters: 96, kernelSize: 11, strides: 4, padding: 'valid', activation: 'relu', name: 'conv1' })
    .apply(input) as tf.SymbolicTensor
  x = tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'pool1' }).apply(x) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({ filters: 256, kernelSize: 5, padding: 'same', activation: 'relu', name: 'conv2' })
    .apply(x) as tf.SymbolicTensor
  x = tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'pool2' }).apply(x) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({ filters: 384, kernelSize: 3, padding: 'same', activation: 'relu', name: 'conv3' })
    .apply(x) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({ filters: 384, kernelSize: 3, padding: 'same', activation: 'relu', name: 'conv4' })
    .apply(x) as tf.SymbolicTensor
  x = tf.layers
    .conv2d({ filters: 256, kernelSize: 3, padding: 'same', activation: 'relu', name: 'conv5' })
    .apply(x) as tf.SymbolicTensor
  x = tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'pool5' }).apply(x) as tf.SymbolicTensor
  x = tf.layers.flatten({ name: 'flatten' }).apply(x) as tf.SymbolicTensor
  x = tf.layers.dense({ units: 4096, activation: 'relu', name: 'fc1' }).apply(x) as tf.SymbolicTensor
  x = tf.layers.dense({ units: 4096, activation: 'relu', name: 'fc2' }).apply(x) as tf.SymbolicTensor
  return { model: tf.model({ inputs: input, outputs: x, name: 'alexnet' }), inputSize: 227, dim: 4096 }
}

// --- deterministic weight filling -----------------------------------------

function fnv1a(text: string): number {
  let hash = 0x811c9dc5
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i)
    hash = Math.imul(hash, 0x01000193)
  }
  return hash >>> 0
}

function mulberry32(seed: number): () => number {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let t = state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function fanIn(shape: number[]): number {
  if (shape.length === 4) return shape[0] * shape[1] * shape[2] // kh*kw*inC
  if (shape.length === 2) return shape[0]
  return shape[0] ?? 1
}

/** Fill every kernel with seeded He-uniform noise; biases/BN keep defaults. */
export function seedWeights(model: tf.LayersModel, seed: number): void {
  for (const weight of model.weights) {
    const shape = weight.shape as number[]
    const name = weight.name
    if (!/kernel/.test(name)) continue // biases zero, batch-norm at defaults
    const size = shape.reduce((a, b) => a * b, 1)
    const limit = Math.sqrt(6.0 / fanIn(shape))
    const rand = mulberry32((fnv1a(`${model.name}/${name}`) + seed) >>> 0)
    const values = new Float32Array(size)
    for (let i = 0; i < size; i++) values[i] = (rand() * 2 - 1) * limit
    const tensor = tf.tensor(values, shape)
    weight.write(tensor)
    tensor.dispose()
  }
}

/**
 * Optional pretrained parameters: a directory of little-endian float32
 * `.bin` files named after each weight (slashes replaced by `__`), e.g.
 * `vgg16__fc1__kernel.bin`. Any tensor without a file keeps its seeded value.
 */
export function loadWeightsFromDir(model: tf.LayersModel, dir: string): number {
  let loaded = 0
  for (const weight of model.weights) {
    const fileName = `${model.name}/${weight.name}`.replace(/\//g, '__') + '.bin'
    const filePath = path.join(dir, fileName)
    if (!fs.existsSync(filePath)) continue
    const raw = fs.readFileSync(filePath)
    const values = new Float32Array(raw.buffer, raw.byteOffset, raw.byteLength / 4)
    const size = (weight.shape as number[]).reduce((a, b) => a * b, 1)
    if (values.length !== size) {
      throw new Error(`${fileName}: expected ${size} floats, found ${values.length}`)
    }
    const tensor = tf.tensor(Array.from(values), weight.shape as number[])
    weight.write(tensor)
    tensor.dispose()
    loaded += 1
  }
  return loaded
}

export function buildBackbone(arch: ArchName, seed: number, weightsDir?: string): Backbone {
  let backbone: Backbone
  switch (arch) {
    case 'vgg16':
      backbone = buildVgg16()
      break
    case 'resnet50':
      backbone = buildResnet50()
      break
    case 'alexnet':
      backbone = buildAlexnet()
      break
    default:
      throw new Error(`unknown architecture ${arch}`)
  }
  seedWeights(backbone.model, seed)
  if (weightsDir) {
    const loaded = loadWeightsFromDir(backbone.model, weightsDir)
    process.stderr.write(`loaded ${loaded} pretrained tensors from ${weightsDir}\n`)
  } else {
    process.stderr.write(
      `note: using seeded deterministic weights for ${arch}; pass --weights-dir for pretrained parameters\n`
    )
  }
  return backbone
}

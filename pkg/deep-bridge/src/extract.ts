import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { toInputTensor, readPng } from './image'
import { ArchName, buildBackbone } from './nets'
import { FeatureRecord, readManifest, recordToJson } from './records'

export interface ExtractOptions {
  manifestPath: string
  cropsDir: string
  arch: ArchName
  outPath: string
  seed?: number
  weightsDir?: string
}

export async function extract(options: ExtractOptions): Promise<number> {
  await tf.setBackend('cpu')
  await tf.ready()
  const entries = readManifest(options.manifestPath)
  const backbone = buildBackbone(options.arch, options.seed ?? 0, options.weightsDir)

  const out = fs.createWriteStream(options.outPath, { encoding: 'utf-8' })
  let written = 0
  for (const entry of entries) {
    const cropPath = path.join(options.cropsDir, `${entry.window_id}.png`)
    if (!fs.existsSync(cropPath)) {
      process.stderr.write(`warning: skipping ${entry.window_id}: no crop at ${cropPath}\n`)
      continue
    }
    const img = readPng(cropPath)
    const [v1, v2, v3, v4] = entry.bbox
    if (img.width !== v3 - v1 + 1 || img.height !== v4 - v2 + 1) {
      throw new Error(
        `${entry.window_id}: crop is ${img.width}x${img.height} but bbox implies ` +
          `${v3 - v1 + 1}x${v4 - v2 + 1}`
      )
    }
    const values = tf.tidy(() => {
      const input = toInputTensor(img, backbone.inputSize)
      const output = backbone.model.predict(input) as tf.Tensor
      return Array.from(output.dataSync())
    })
    if (values.length !== backbone.dim) {
      throw new Error(`expected ${backbone.dim} activations, got ${values.length}`)
    }
    const record: FeatureRecord = { ...entry, extractor: options.arch, values }
    out.write(recordToJson(record) + '\n')
    written += 1
  }
  await new Promise<void>((resolve, reject) => {
    out.end(() => resolve())
    out.on('error', reject)
  })
  backbone.model.dispose()
  return written
}

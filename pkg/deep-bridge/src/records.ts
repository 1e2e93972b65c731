import * as fs from 'fs'

export const EXPECTED_DIMS: Record<string, number> = {
  conventional: 28,
  vgg16: 4096,
  resnet50: 2048,
  alexnet: 4096,
}

export const LABELS = new Set(['positive', 'negative', 'unlabeled'])

export interface ManifestEntry {
  window_id: string
  image_id: string
  bbox: [number, number, number, number]
  label: string
}

export interface FeatureRecord extends ManifestEntry {
  extractor: string
  values: number[]
}

const RECORD_KEYS = new Set(['window_id', 'image_id', 'bbox', 'label', 'extractor', 'values'])

export function readManifest(path: string): ManifestEntry[] {
  const out: ManifestEntry[] = []
  const lines = fs.readFileSync(path, 'utf-8').split('\n')
  lines.forEach((line, index) => {
    if (!line.trim()) return
    let obj: any
    try {
      obj = JSON.parse(line)
    } catch (err) {
      throw new Error(`${path}:${index + 1}: malformed JSON (${err})`)
    }
    for (const key of ['window_id', 'image_id', 'bbox', 'label']) {
      if (!(key in obj)) throw new Error(`${path}:${index + 1}: missing field ${key}`)
    }
    if (!Array.isArray(obj.bbox) || obj.bbox.length !== 4) {
      throw new Error(`${path}:${index + 1}: bbox must have 4 entries`)
    }
    if (!LABELS.has(obj.label)) {
      throw new Error(`${path}:${index + 1}: unknown label ${JSON.stringify(obj.label)}`)
    }
    out.push({
      window_id: String(obj.window_id),
      image_id: String(obj.image_id),
      bbox: obj.bbox.map((v: any) => Math.trunc(v)) as [number, number, number, number],
      label: obj.label,
    })
  })
  return out
}

export function recordToJson(rec: FeatureRecord): string {
  return JSON.stringify({
    window_id: rec.window_id,
    image_id: rec.image_id,
    bbox: rec.bbox,
    label: rec.label,
    extractor: rec.extractor,
    values: rec.values,
  })
}

export interface Violation {
  line: number
  message: string
}

/** Check one parsed record line against the shared wire schema. */
export function checkRecord(obj: any, arch?: string): string | null {
  if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
    return 'record line must be a JSON object'
  }
  for (const key of RECORD_KEYS) {
    if (!(key in obj)) return `missing field ${key}`
  }
  for (const key of Object.keys(obj)) {
    if (!RECORD_KEYS.has(key)) return `unknown field ${key}`
  }
  if (!LABELS.has(obj.label)) return `unknown label ${JSON.stringify(obj.label)}`
  const expected = EXPECTED_DIMS[obj.extractor]
  if (expected === undefined) return `unknown extractor ${JSON.stringify(obj.extractor)}`
  if (arch && obj.extractor !== arch) {
    return `extractor ${obj.extractor} does not match expected ${arch}`
  }
  if (!Array.isArray(obj.values)) return 'values must be a list'
  if (obj.values.length !== expected) {
    return `extractor ${obj.extractor} expects ${expected} values, got ${obj.values.length}`
  }
  for (let i = 0; i < obj.values.length; i++) {
    const v = obj.values[i]
    if (typeof v !== 'number' || !Number.isFinite(v)) {
      return `value ${i} is not a finite number`
    }
  }
  if (!Array.isArray(obj.bbox) || obj.bbox.length !== 4) return 'bbox must have 4 entries'
  const [v1, v2, v3, v4] = obj.bbox
  if (v1 > v3 || v2 > v4) return `invalid bbox [${obj.bbox}]`
  return null
}

export function validateFile(path: string, arch?: string): { count: number; violations: Violation[] } {
  const violations: Violation[] = []
  let count = 0
  const lines = fs.readFileSync(path, 'utf-8').split('\n')
  lines.forEach((line, index) => {
    if (!line.trim()) return
    count += 1
    let obj: any
    try {
      obj = JSON.parse(line)
    } catch (err) {
      violations.push({ line: index + 1, message: `malformed JSON (${err})` })
      return
    }
    const problem = checkRecord(obj, arch)
    if (problem) violations.push({ line: index + 1, message: problem })
  })
  return { count, violations }
}

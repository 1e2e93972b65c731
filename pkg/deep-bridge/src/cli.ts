import { ARCHS, ArchName } from './nets'
import { extract } from './extract'
import { validateFile } from './records'

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${argv.slice(i).join(' ')}`)
    }
    flags.set(key.slice(2), argv[i + 1])
  }
  return flags
}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name)
  if (value === undefined) throw new Error(`missing required --${name}`)
  return value
}

function usage(): string {
  return [
    'usage:',
    '  deep-bridge extract --manifest m.jsonl --crops dir/ --arch vgg16 --out feats.jsonl [--seed 0] [--weights-dir dir/]',
    '  deep-bridge validate --in feats.jsonl [--arch vgg16]',
    `architectures: ${ARCHS.join(', ')}`,
  ].join('\n')
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2)
  if (command === 'extract') {
    const flags = parseFlags(rest)
    const arch = requireFlag(flags, 'arch') as ArchName
    if (!ARCHS.includes(arch)) throw new Error(`unknown --arch ${arch}; pick from ${ARCHS.join(', ')}`)
    const written = await extract({
      manifestPath: requireFlag(flags, 'manifest'),
      cropsDir: requireFlag(flags, 'crops'),
      arch,
      outPath: requireFlag(flags, 'out'),
      seed: flags.has('seed') ? Number(flags.get('seed')) : 0,
      weightsDir: flags.get('weights-dir'),
    })
    process.stdout.write(`${written} records -> ${flags.get('out')}\n`)
    return 0
  }
  if (command === 'validate') {
    const flags = parseFlags(rest)
    const file = requireFlag(flags, 'in')
    const { count, violations } = validateFile(file, flags.get('arch'))
    if (violations.length === 0) {
      process.stdout.write(`OK, ${count} records\n`)
      return 0
    }
    for (const v of violations) {
      process.stderr.write(`${file}:${v.line}: ${v.message}\n`)
    }
    return 1
  }
  process.stderr.write(usage() + '\n')
  return command === undefined || command === 'help' || command === '--help' ? 0 : 2
}

main()
  .then((code) => process.exit(code))
  .catch((err) => {
    process.stderr.write(`error: ${err.message ?? err}\n`)
    process.exit(1)
  })

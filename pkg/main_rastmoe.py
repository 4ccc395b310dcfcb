# main_rastmoe.py - CLI RAST-MoE: surrogato, domanda, training, valutazione, esperimenti e report
import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from config_rastmoe import (
    ALPHA_SWEEP, DEMAND_PRESETS, EPISODE_CSV_SCHEMA, EVAL_CONFIG, EVAL_CSV_SCHEMA, EXIT_CODES,
    FIXED_RATIO_PRESETS, RUNS_DIR, SCENARIO_DEFAULTS
)
from utils.config_loader import ConfigBundle, load_config
from utils.errors import ConfigError, RastMoeError
from utils.metrics_tracker import MetricsTracker
from utils.run_manifest import RunManifest
from utils.text_utils import slugify

BASELINES = ('instant', 'interval')
PERTURBATIONS = ('global', 'incident')


def eval_settings(bundle: ConfigBundle) -> Dict:
    block = bundle.block('eval')
    unknown = set(block) - set(EVAL_CONFIG)
    if unknown:
        raise ConfigError(f"unknown eval keys: {sorted(unknown)}")
    return {**EVAL_CONFIG, **block}


def ratio_label(ratio: str) -> str:
    return 'ratio_' + slugify(ratio)


def alpha_label(alpha: float) -> str:
    return slugify(f"α={alpha:g}")


class RastMoeRunner:
    """
    Orchestratore di un singolo comando: carica scenario e policy su richiesta,
    scrive i CSV di valutazione e un manifest per run nella directory di output.
    """

    def __init__(self, bundle: ConfigBundle, out_dir, seed: int, command: str, verbose: bool = True):
        self.bundle = bundle
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.command = command
        self.verbose = verbose
        self.manifest = RunManifest(command, bundle.path, bundle.hash, seed, str(self.out_dir))
        self._scenario = None

        # Statistiche sessione
        self.session_stats = {
            'start_time': time.time(),
            'evaluations': 0,
            'episodes': 0,
            'children': 0,
            'warnings': [],
        }

    # ---------- risorse condivise ----------

    @property
    def scenario(self):
        if self._scenario is None:
            from simulator.scenario import build_scenario
            self._scenario = build_scenario(self.bundle.block('scenario'), self.bundle.base_dir)
        return self._scenario

    @property
    def reward_config(self):
        from simulator.reward import RewardConfig
        return RewardConfig.from_dict(self.bundle.block('reward'))

    def grid(self) -> tuple:
        block = self.bundle.block('scenario')
        return (int(block.get('grid_h', SCENARIO_DEFAULTS['grid_h'])),
                int(block.get('grid_w', SCENARIO_DEFAULTS['grid_w'])))

    def load_policy(self, checkpoint: Optional[str]):
        """Checkpoint esplicito o directory di run (ultimo checkpoint numerato)"""
        from policy import RastMoePolicy
        from trainers.train_loop import latest_checkpoint

        if not checkpoint:
            raise ConfigError("checkpoint required")
        path = Path(checkpoint)
        if path.is_dir():
            found = latest_checkpoint(path)
            if found is None:
                raise ConfigError(f"checkpoint required: no checkpoints under {path}")
            path = found
        policy, meta = RastMoePolicy.load(path)
        self.manifest.outputs['checkpoint'] = str(path)
        print(f"📦 Policy caricata: {path.name} (update {meta.get('update', '?')}, "
              f"{policy.num_parameters} parametri)")
        return policy

    def evaluate(self, agent, label: str, **kwargs):
        from trainers.evaluation import evaluate_policy

        settings = eval_settings(self.bundle)
        episodes = kwargs.pop('episodes', None) or settings['episodes']
        report = evaluate_policy(
            agent, self.scenario, episodes,
            reward_config=self.reward_config, threshold=settings['threshold'],
            seed_offset=settings['seed_offset'], horizon_h=settings['horizon_h'],
            label=label, verbose=self.verbose, **kwargs,
        )
        self.session_stats['evaluations'] += 1
        self.session_stats['episodes'] += report.episodes
        print(f"  📊 {label}: reward {report.total_reward:.4f} ± {report.total_reward_std:.4f}, "
              f"match {report.match_wait_s:.1f}s, pickup {report.pickup_wait_s:.1f}s, "
              f"violazioni {report.violation_rate:.1%}")
        return report

    def write_reports(self, reports: Sequence) -> Dict[str, str]:
        summary = MetricsTracker(self.out_dir / "eval_report.csv", EVAL_CSV_SCHEMA, verbose=False)
        summary.extend(report.as_row() for report in reports)
        episodes = MetricsTracker(self.out_dir / "eval_episodes.csv", EPISODE_CSV_SCHEMA, verbose=False)
        episodes.extend({'label': report.label, **row} for report in reports for row in report.rows)
        return {'eval_report': summary.save(), 'eval_episodes': episodes.save()}

    # ---------- comandi ----------

    def cmd_build_surrogate(self, args) -> Dict[str, str]:
        from processors.surrogate_builder import build_surrogate

        result = build_surrogate(args.network, args.flows, self.out_dir / "od_table.json",
                                 weight_mode=args.weight_mode, nodes_path=args.nodes)
        self.session_stats['warnings'].extend(result['warnings'])
        return result['paths']

    def cmd_ingest_trips(self, args) -> Dict[str, str]:
        from processors.demand import ingest_trips, load_zone_centroids

        grid_h, grid_w = self.grid()
        centroids = load_zone_centroids(args.centroids) if args.centroids else None
        profiles = ingest_trips(args.trips, grid_h, grid_w, centroids)
        if profiles.meta.get('skipped'):
            self.session_stats['warnings'].append(f"{profiles.meta['skipped']} trips skipped")
        path = profiles.save(self.out_dir / "demand_profiles.json")
        print(f"✅ Profili: {profiles.meta.get('trips', 0)} viaggi su {profiles.meta.get('days', 0)} giorni → {path}")
        return {'profiles': str(path)}

    def cmd_gen_demand(self, args) -> Dict[str, str]:
        from processors.demand import gen_synthetic_demand

        grid_h, grid_w = self.grid()
        return gen_synthetic_demand(args.preset, grid_h, grid_w, self.seed, self.out_dir,
                                    trip_days=args.trip_days)

    def cmd_train(self, args) -> Dict[str, str]:
        from trainers.train_loop import train_loop

        result = train_loop(self.bundle, self.out_dir, self.seed, args.resume, self.verbose)
        return {
            'checkpoint': str(result['checkpoint']),
            'metrics': str(self.out_dir / "metrics.csv"),
            'lambda_trajectory': str(self.out_dir / "lambda_trajectory.csv"),
            'utilization': str(self.out_dir / "utilization.csv"),
            'eval': str(self.out_dir / "eval.csv"),
        }

    def cmd_evaluate(self, args) -> Dict[str, str]:
        from policy import ExpertMask

        policy = self.load_policy(args.checkpoint)
        mask = ExpertMask(frozenset(args.mask)) if args.mask else None
        report = self.evaluate(policy, 'masked' if mask else 'policy', episodes=args.episodes, mask=mask)
        return self.write_reports([report])

    def cmd_baseline(self, args) -> Dict[str, str]:
        kinds = BASELINES if args.kind == 'both' else (args.kind,)
        reports = [self.evaluate(kind, kind, episodes=args.episodes) for kind in kinds]
        return self.write_reports(reports)

    def cmd_mask_experts(self, args) -> Dict[str, str]:
        from policy import ExpertMask

        policy = self.load_policy(args.checkpoint)
        if args.experts:
            mask = ExpertMask(frozenset(args.experts))
            unmasked = self.evaluate(policy, 'unmasked', episodes=args.episodes)
        elif policy.utilization.steps:
            mask = ExpertMask.top_frequency(policy.utilization.frequencies(), args.top)
            unmasked = self.evaluate(policy, 'unmasked', episodes=args.episodes)
        else:
            # checkpoint senza contatori: frequenze misurate sulla valutazione non mascherata
            unmasked = self.evaluate(policy, 'unmasked', episodes=args.episodes, track=True)
            mask = ExpertMask.top_frequency(policy.utilization.frequencies(), args.top)
        mask.validate(policy.config.n_experts, policy.config.top_k)
        print(f"  🔧 Esperti mascherati: {sorted(mask.disabled)}")

        masked = self.evaluate(policy, 'masked', episodes=args.episodes, seeds=unmasked.seeds, mask=mask)
        delta = masked.total_reward - unmasked.total_reward
        print(f"  📈 Δ reward mascherato − non mascherato: {delta:+.4f}")
        self.manifest.outputs['masked_experts'] = ' '.join(str(e) for e in sorted(mask.disabled))
        return self.write_reports([unmasked, masked])

    def cmd_perturb_eval(self, args) -> Dict[str, str]:
        from surrogate.mfd import PerturbationSpec
        from trainers.evaluation import degradation

        policy = self.load_policy(args.checkpoint)
        kinds = PERTURBATIONS if args.kind == 'both' else (args.kind,)
        base = self.evaluate(policy, 'base', episodes=args.episodes)
        reports, rows = [base], []
        for kind in kinds:
            corridor = tuple(args.corridor) if kind == 'incident' and args.corridor else None
            spec = PerturbationSpec(kind, corridor_edges=corridor)
            report = self.evaluate(policy, kind, seeds=base.seeds, perturbation=spec)
            reports.append(report)
            for key in ('pickup_wait_s', 'match_wait_s', 'total_reward'):
                rows.append({'label': kind, 'key': key, 'base': getattr(base, key),
                             'perturbed': getattr(report, key), 'degradation_pct': degradation(base, report, key)})
            print(f"  ⚠️ {kind}: degrado pickup {rows[-3]['degradation_pct']:+.1f}%")

        paths = self.write_reports(reports)
        paths['degradation'] = str(self.out_dir / "degradation.csv")
        pd.DataFrame(rows).to_csv(paths['degradation'], index=False, encoding='utf-8')
        return paths

    def run_sweep(self, children: List[Dict], workers: int) -> Dict[str, str]:
        """Child run isolati per directory; in parallelo con workers > 1"""
        print(f"\n🔄 SWEEP - {len(children)} run, {max(1, workers)} worker")
        print("=" * 50)
        jobs = [dict(child, parent=self.command, data=self.bundle.data, config_path=self.bundle.path, seed=self.seed,
                     verbose=self.verbose and workers <= 1) for child in children]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_child, jobs))
        else:
            results = [run_child(job) for job in jobs]

        self.manifest.children = [result['manifest'] for result in results]
        self.session_stats['children'] = len(results)
        failed = [result for result in results if result['exit_code']]
        if failed:
            worst = max(result['exit_code'] for result in failed)
            error = RastMoeError(f"{len(failed)} sweep runs failed: {', '.join(r['label'] for r in failed)}")
            error.exit_code = worst
            raise error

        path = self.out_dir / "sweep_summary.csv"
        pd.DataFrame([result['row'] for result in results], columns=EVAL_CSV_SCHEMA).to_csv(
            path, index=False, encoding='utf-8')
        return {'sweep_summary': str(path)}

    def cmd_sweep_alpha(self, args) -> Dict[str, str]:
        values = args.values or list(ALPHA_SWEEP)
        children = [{'label': alpha_label(alpha), 'out_dir': str(self.out_dir / alpha_label(alpha)),
                     'reward': {'alpha': float(alpha), 'fixed_ratio': None}} for alpha in values]
        return self.run_sweep(children, args.workers)

    def cmd_sweep_ratio(self, args) -> Dict[str, str]:
        ratios = args.ratios or list(FIXED_RATIO_PRESETS)
        unknown = [ratio for ratio in ratios if ratio not in FIXED_RATIO_PRESETS]
        if unknown:
            raise ConfigError(f"unknown fixed ratios {unknown}; expected {sorted(FIXED_RATIO_PRESETS)}")
        children = [{'label': ratio_label(ratio), 'out_dir': str(self.out_dir / ratio_label(ratio)),
                     'reward': {'fixed_ratio': ratio}} for ratio in ratios]
        return self.run_sweep(children, args.workers)

    def cmd_report(self, args) -> Dict[str, str]:
        from processors.report import build_report
        return build_report(args.inputs, self.out_dir)

    # ---------- esecuzione ----------

    def print_session_summary(self):
        duration = time.time() - self.session_stats['start_time']
        print(f"\n📊 SESSIONE {self.command.upper()}")
        print("=" * 50)
        print(f"⏱️ Durata: {duration:.1f}s")
        if self.session_stats['evaluations']:
            print(f"🧪 Valutazioni: {self.session_stats['evaluations']} ({self.session_stats['episodes']} episodi)")
        if self.session_stats['children']:
            print(f"🔄 Run figli: {self.session_stats['children']}")
        for warning in self.session_stats['warnings']:
            print(f"  ⚠️ {warning}")
        print(f"💾 Output in {os.path.abspath(self.out_dir)}")

    def execute(self, args, handler=None) -> int:
        """Esegue il comando (o handler), scrive il manifest e restituisce l'exit code"""
        handler = handler or getattr(self, 'cmd_' + self.command.replace('-', '_'))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        print(f"\n🚀 {self.command.upper()} - seed {self.seed}, config {self.bundle.path or '(default)'}")
        print(f"🔧 Config hash: {self.bundle.hash[:12]}")
        print("=" * 50)
        try:
            outputs = handler(args) or {}
        except RastMoeError as e:
            print(f"❌ {type(e).__name__}: {e}")
            self.manifest.finish(e.exit_code, str(e))
            self.manifest.write()
            return e.exit_code
        except Exception as e:
            print(f"❌ Errore inatteso: {e!r}")
            self.manifest.finish(EXIT_CODES['unexpected'], repr(e))
            self.manifest.write()
            if os.getenv('RASTMOE_DEBUG') == '1':
                raise
            return EXIT_CODES['unexpected']

        self.manifest.outputs.update({key: str(value) for key, value in outputs.items()})
        self.manifest.finish(0)
        self.manifest.write()
        if self.verbose:
            self.print_session_summary()
        return 0


def run_child(job: Dict) -> Dict:
    """Train + valutazione di un run dello sweep (funzione top-level per il process pool)"""
    from trainers.train_loop import train_loop

    bundle = ConfigBundle(job['data'], job['config_path']).with_overrides(reward=job['reward'])
    runner = RastMoeRunner(bundle, job['out_dir'], job['seed'], f"{job['parent']}:{job['label']}", job['verbose'])
    row: Dict = {}

    def train_and_evaluate(_args):
        result = train_loop(runner.bundle, runner.out_dir, runner.seed, verbose=runner.verbose)
        report = runner.evaluate(result['policy'], job['label'])
        row.update(report.as_row())
        paths = runner.write_reports([report])
        paths['checkpoint'] = str(result['checkpoint'])
        return paths

    exit_code = runner.execute(None, train_and_evaluate)
    return {'label': job['label'], 'exit_code': exit_code, 'row': row,
            'manifest': str(Path(job['out_dir']) / "manifest.json")}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="training config JSON")
    common.add_argument('--out', help="directory di output (default runs/<comando>)")
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--quiet', action='store_true', help="niente progress bar né riepiloghi")

    parser = argparse.ArgumentParser(prog='main_rastmoe.py', description="RAST-MoE ride-hailing dispatch toolkit")
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('build-surrogate', parents=[common], help="rete + flussi → tabella OD")
    p.add_argument('--network', required=True)
    p.add_argument('--nodes')
    p.add_argument('--flows', required=True)
    p.add_argument('--weight-mode', choices=('free_flow_time', 'length'))

    p = sub.add_parser('ingest-trips', parents=[common], help="viaggi → profili di domanda per zona e ora")
    p.add_argument('--trips', required=True)
    p.add_argument('--centroids', help="CSV zone_id,x,y per mappare zone sorgente nella griglia")

    p = sub.add_parser('gen-demand', parents=[common], help="scenario sintetico (profili, rete, flussi)")
    p.add_argument('--preset', choices=sorted(DEMAND_PRESETS), default='two_peak')
    p.add_argument('--trip-days', type=int, default=0)

    p = sub.add_parser('train', parents=[common], help="PPO/GRPO sullo scenario del config")
    p.add_argument('--resume', help="checkpoint da cui riprendere")

    for name, text in (('evaluate', "valutazione greedy di un checkpoint"),
                       ('mask-experts', "checkpoint con e senza gli esperti più usati"),
                       ('perturb-eval', "degrado sotto perturbazioni della tabella OD")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--checkpoint', help="file .npz o directory di run")
        p.add_argument('--episodes', type=int)
        if name == 'evaluate':
            p.add_argument('--mask', type=int, nargs='*', help="id esperti da disabilitare")
        elif name == 'mask-experts':
            p.add_argument('--top', type=int, default=2)
            p.add_argument('--experts', type=int, nargs='*')
        else:
            p.add_argument('--kind', choices=PERTURBATIONS + ('both',), default='both')
            p.add_argument('--corridor', nargs='*', help="id archi del corridoio (default: campionato)")

    p = sub.add_parser('baseline', parents=[common], help="euristiche instant / interval")
    p.add_argument('--kind', choices=BASELINES + ('both',), default='both')
    p.add_argument('--episodes', type=int)

    p = sub.add_parser('sweep-alpha', parents=[common], help="training a più tolleranze α")
    p.add_argument('--values', type=float, nargs='*')
    p.add_argument('--workers', type=int, default=1)

    p = sub.add_parser('sweep-ratio', parents=[common], help="training a pesi fissi c_m:c_p")
    p.add_argument('--ratios', nargs='*')
    p.add_argument('--workers', type=int, default=1)

    p = sub.add_parser('report', parents=[common], help="aggrega CSV di run in tabelle e long-format")
    p.add_argument('inputs', nargs='+', help="directory di run o CSV")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or os.path.join(RUNS_DIR, args.command)
    try:
        bundle = load_config(args.config)
    except RastMoeError as e:
        print(f"❌ {type(e).__name__}: {e}")
        manifest = RunManifest(args.command, args.config, '', args.seed, out_dir)
        manifest.finish(e.exit_code, str(e)).write()
        return e.exit_code

    runner = RastMoeRunner(bundle, out_dir, args.seed, args.command, verbose=not args.quiet)
    return runner.execute(args)


if __name__ == "__main__":
    sys.exit(main())

"""manage.py clv <subcommand>: command-line surface of the clv app.

    manage.py clv ingest    --transactions tx.csv --split 52
    manage.py clv fit       --transactions tx.csv --split 52 --output pnbd.json
    manage.py clv fit       --family gg --transactions tx.csv --split 52 --output gg.json
    manage.py clv predict   --model pnbd.json --spending-model gg.json --transactions tx.csv --split 52
    manage.py clv diagnose  --model pnbd.json --what tracking --transactions tx.csv --split 52
    manage.py clv simulate  --scenario scenario.json --output tx.csv --truth truth.csv

Exit codes: 0 ok, 1 usage/validation, 2 fit finished with warnings, 3 numerical failure.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from clv import bootstrap, conf, dataset, prediction, serialization, simulation
from clv.estimation import (
    GammaGammaSpec, OptimizerConfig, PnbdSpec, fit, lr_test, summary_report,
)
from clv.exceptions import ClvError, NumericalError, UsageError
from clv.logging_utils import with_run_id
from clv.pnbd import ModelOptions
from clv.pnbd_dynamic import DynamicPnbdSpec

logger = logging.getLogger('clv.cli')

SUBCOMMANDS = ('ingest', 'summarize', 'series', 'fit', 'predict', 'diagnose', 'simulate',
               'bootstrap', 'lrtest', 'newcustomer', 'hessian')


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------
def number_or_date(text):
    """'52' / '52.5' -> float, anything else stays a date string."""
    if text is None:
        return None
    try:
        return float(text)
    except ValueError:
        return text


def parse_selection(text):
    """Two-part covariate selection 'life | trans'.

    Names are separated by '+' or ','; '.' selects every covariate of the
    process, an empty side selects none. Returns (life, trans) where None
    means all.
    """
    if text is None:
        return None, None
    parts = text.split('|')
    if len(parts) != 2:
        raise UsageError('covariate selection must look like "life | trans"', selection=text)

    def side(part):
        part = part.strip()
        if part == '.':
            return None
        names = [n.strip() for n in part.replace(',', '+').split('+')]
        return tuple(n for n in names if n)

    return side(parts[0]), side(parts[1])


def parse_pairs(text):
    """'r=1,alpha=2' -> {'r': 1.0, 'alpha': 2.0}"""
    out = {}
    for item in filter(None, (text or '').split(',')):
        if '=' not in item:
            raise UsageError('expected name=value pairs', value=item)
        name, value = item.split('=', 1)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError('value must be a number', name=name.strip(), value=value)
    return out


def parse_floats(text, count=None):
    try:
        values = tuple(float(v) for v in text.split(','))
    except ValueError:
        raise UsageError('expected comma-separated numbers', value=text)
    if count is not None and len(values) != count:
        raise UsageError(f'expected {count} comma-separated numbers', value=text)
    return values


def _dataset_args(p, required=True):
    g = p.add_argument_group('transaction data')
    g.add_argument('--transactions', required=required, help='transaction CSV')
    g.add_argument('--date-format', default=None, help='ymd | mdy | dmy | strftime pattern')
    g.add_argument('--time-unit', default=None, choices=sorted(dataset.TIME_UNITS))
    g.add_argument('--split', default=None, help='estimation length in time units, or a date')
    g.add_argument('--data-end', default=None, help='end of the observation window (date)')
    g.add_argument('--name-id', default=dataset.ID)
    g.add_argument('--name-date', default=dataset.DATE)
    g.add_argument('--name-price', default=dataset.PRICE)
    c = p.add_argument_group('covariates')
    c.add_argument('--covariates-life', default=None, help='covariate CSV for the attrition process')
    c.add_argument('--covariates-trans', default=None, help='covariate CSV for the purchase process')
    c.add_argument('--cov-mode', default='static', choices=['static', 'dynamic'])
    c.add_argument('--cov-date', default=None, help='interval start column (dynamic covariates)')


def _model_args(p):
    g = p.add_argument_group('model')
    g.add_argument('--family', default='pnbd', choices=['pnbd', 'gg'])
    g.add_argument('--covariates', default=None, help='selection "life | trans", e.g. "gender | ."')
    g.add_argument('--correlation', action='store_true', help='Sarmanov-correlated rates')
    g.add_argument('--reg', default=None, help='L2 penalties "lambda_trans,lambda_life"')
    g.add_argument('--constrain', default=None, help='covariates with one shared coefficient')
    g.add_argument('--order', type=int, default=None, help='quadrature order (dynamic model)')
    g.add_argument('--keep-first', action='store_true',
                   help='Gamma-Gamma: keep each first transaction')
    o = p.add_argument_group('optimizer')
    o.add_argument('--method', default=None, help='L-BFGS-B | Nelder-Mead')
    o.add_argument('--max-evals', type=int, default=None)
    o.add_argument('--tolerance', type=float, default=None)
    o.add_argument('--start', default=None, help='start values "r=1,alpha=2"')
    o.add_argument('--hessian', dest='hessian', action='store_true', default=None)
    o.add_argument('--no-hessian', dest='hessian', action='store_false')
    o.add_argument('--trace', action='store_true')


def _prediction_args(p):
    g = p.add_argument_group('prediction')
    g.add_argument('--horizon', default=None, help='time units after the estimation end, or a date')
    g.add_argument('--discount-annual', type=float, default=None, help='discrete annual rate')
    g.add_argument('--spending-model', default=None, help='Gamma-Gamma model JSON')


def _output_arg(p, help_text='output CSV (default: stdout)'):
    p.add_argument('--output', '-o', default=None, help=help_text)


# ---------------------------------------------------------------------------
# Command
# ---------------------------------------------------------------------------
class Command(BaseCommand):
    help = 'Customer-base analysis: ingest, fit, predict, diagnose, simulate, bootstrap'

    def add_arguments(self, parser):
        parser.add_argument('--threads', type=int, default=None,
                            help='worker threads (default: CLV_THREADS or 1)')
        parser.add_argument('--log-level', default=None,
                            choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
        sub = parser.add_subparsers(dest='subcommand', required=True)

        p = sub.add_parser('ingest', help='aggregate a transaction log and print its summary')
        _dataset_args(p)
        p.add_argument('--cbs', default=None, help='write the per-customer summary CSV')

        p = sub.add_parser('summarize', help='summary table of a transaction log')
        _dataset_args(p)
        _output_arg(p)

        p = sub.add_parser('series', help='descriptive plot data')
        _dataset_args(p)
        p.add_argument('--which', required=True,
                       choices=['tracking', 'frequency', 'spending', 'interpurchasetime', 'timings'])
        p.add_argument('--sample', default=None, choices=list(dataset.SAMPLES))
        p.add_argument('--cumulative', action='store_true')
        p.add_argument('--trans-bins', type=int, default=None)
        p.add_argument('--all-transactions', action='store_true',
                       help='spending: every transaction instead of customer means')
        p.add_argument('--ids', default=None, help='timings: comma-separated customer ids')
        p.add_argument('--n', type=int, default=None, help='timings: number of random customers')
        p.add_argument('--seed', type=int, default=0)
        _output_arg(p)

        p = sub.add_parser('fit', help='estimate a model and write it as JSON')
        _dataset_args(p)
        _model_args(p)
        p.add_argument('--output', '-o', required=True, help='model JSON')
        p.add_argument('--summary', default=None, help='write the summary text here (default: stdout)')

        p = sub.add_parser('predict', help='per-customer prediction table')
        _dataset_args(p)
        _prediction_args(p)
        p.add_argument('--model', required=True, help='attrition model JSON')
        p.add_argument('--evaluate', action='store_true', help='print MAE/RMSE against the holdout')
        _output_arg(p)

        p = sub.add_parser('diagnose', help='tracking, count distribution or spending density data')
        _dataset_args(p)
        p.add_argument('--model', action='append', required=True, help='model JSON (repeatable)')
        p.add_argument('--label', action='append', default=None, help='label per --model')
        p.add_argument('--what', default='tracking', choices=['tracking', 'pmf', 'spending'])
        p.add_argument('--cumulative', action='store_true')
        p.add_argument('--trans-bins', type=int, default=None)
        p.add_argument('--bins', type=int, default=30)
        _output_arg(p)

        p = sub.add_parser('simulate', help='simulate a transaction log from a JSON scenario')
        p.add_argument('--scenario', required=True, help='scenario JSON')
        p.add_argument('--output', '-o', required=True, help='transaction CSV')
        p.add_argument('--truth', default=None, help='latent truth CSV')
        p.add_argument('--covariates-output', default=None, help='covariate CSV (both processes)')

        p = sub.add_parser('bootstrap', help='bootstrap intervals for parameters or predictions')
        _dataset_args(p)
        _prediction_args(p)
        p.add_argument('--model', required=True)
        p.add_argument('--what', default='params', choices=['params', 'predict', 'tracking'])
        p.add_argument('--num-boots', type=int, default=100)
        p.add_argument('--seed', type=int, default=0)
        p.add_argument('--quantiles', default=None, help='e.g. "0.05,0.95"')
        p.add_argument('--cumulative', action='store_true')
        _output_arg(p)

        p = sub.add_parser('lrtest', help='likelihood-ratio test of two nested fits')
        p.add_argument('--constrained', required=True)
        p.add_argument('--unconstrained', required=True)

        p = sub.add_parser('newcustomer', help='expectations for a customer without history')
        p.add_argument('--model', required=True)
        p.add_argument('--spending-model', default=None)
        p.add_argument('-t', '--horizon', type=float, required=True)
        p.add_argument('--cov-trans', default=None, help='"name=value,..." for the purchase process')
        p.add_argument('--cov-life', default=None, help='"name=value,..." for the attrition process')

        p = sub.add_parser('hessian', help='attach Hessian and covariance to a model JSON')
        _dataset_args(p)
        p.add_argument('--model', required=True)
        p.add_argument('--output', '-o', default=None, help='model JSON (default: overwrite --model)')

    def handle(self, *args, **opts):
        if opts.get('log_level'):
            level = getattr(logging, opts['log_level'])
            for handler in logging.getLogger('clv').handlers:
                if isinstance(handler, logging.StreamHandler) and not hasattr(handler, 'baseFilename'):
                    handler.setLevel(level)
        subcommand = opts['subcommand']
        with with_run_id(subcommand):
            try:
                getattr(self, f'cmd_{subcommand}')(opts)
            except NumericalError as exc:
                raise CommandError(f'numerical failure: {exc}', returncode=3)
            except ClvError as exc:
                raise CommandError(str(exc), returncode=exc.exit_code)
            except CommandError:
                raise
            except Exception:
                logger.exception('%s failed', subcommand)
                raise

    # -- helpers ----------------------------------------------------------
    def _threads(self, opts):
        return opts.get('threads') or conf.get('threads')

    def _write(self, frame: pd.DataFrame, path, index=False):
        if path:
            frame.to_csv(path, index=index, date_format='%Y-%m-%d %H:%M:%S')
            logger.info('wrote %d rows to %s', len(frame), path)
        else:
            self.stdout.write(frame.to_csv(index=index, date_format='%Y-%m-%d %H:%M:%S'), ending='')

    def _dataset(self, opts):
        if opts['cov_mode'] == 'dynamic' and (opts['covariates_life'] or opts['covariates_trans']) \
                and not opts['cov_date']:
            raise UsageError('dynamic covariates need --cov-date')
        if bool(opts['covariates_life']) != bool(opts['covariates_trans']):
            raise UsageError('give both --covariates-life and --covariates-trans')
        date_format = opts['date_format'] or conf.get('date_format')
        raw = dataset.read_transactions(opts['transactions'], opts['name_id'], opts['name_date'],
                                        opts['name_price'], date_format)
        ds = dataset.ingest(raw, date_format, time_unit=opts['time_unit'] or conf.get('time_unit'),
                            estimation_split=number_or_date(opts['split']),
                            data_end=opts['data_end'])
        if opts['covariates_life']:
            cov_date = opts['cov_date'] or dataset.COV_DATE
            life = dataset.read_covariates(opts['covariates_life'], None, opts['cov_mode'],
                                           opts['name_id'], cov_date, date_format)
            trans = dataset.read_covariates(opts['covariates_trans'], None, opts['cov_mode'],
                                            opts['name_id'], cov_date, date_format)
            ds = dataset.attach_covariates(ds, life, trans)
        return ds

    def _discount(self, opts):
        return prediction.DiscountSpec(opts.get('discount_annual'))

    def _spending_fit(self, opts):
        path = opts.get('spending_model')
        return serialization.load_fit(path) if path else None

    def _model_spec(self, opts, ds):
        if opts['family'] == 'gg':
            return GammaGammaSpec(remove_first_transaction=not opts['keep_first'])
        life, trans = parse_selection(opts['covariates'])
        constrained = tuple(n.strip() for n in (opts['constrain'] or '').split(',') if n.strip())
        options = ModelOptions(
            use_correlation=opts['correlation'],
            reg_lambdas=parse_floats(opts['reg'], 2) if opts['reg'] else None,
            constrained_names=constrained,
        )
        if ds.covariate_mode == 'dynamic':
            return DynamicPnbdSpec(options, trans, life, opts['order'])
        return PnbdSpec(options, trans, life)

    # -- subcommands ------------------------------------------------------
    def cmd_ingest(self, opts):
        ds = self._dataset(opts)
        self.stdout.write(dataset.summarize(ds).to_frame().to_string())
        if opts['cbs']:
            ds.cbs.to_csv(opts['cbs'], date_format='%Y-%m-%d %H:%M:%S')
            logger.info('wrote customer summary to %s', opts['cbs'])

    def cmd_summarize(self, opts):
        ds = self._dataset(opts)
        self._write(dataset.summarize(ds).to_frame(), opts['output'], index=True)

    def cmd_series(self, opts):
        ds = self._dataset(opts)
        options = {'cumulative': opts['cumulative'], 'trans_bins': opts['trans_bins'],
                   'mean_spending': not opts['all_transactions'], 'n': opts['n'],
                   'seed': opts['seed']}
        if opts['sample']:
            options['sample'] = opts['sample']
        if opts['ids']:
            options['ids'] = [i.strip() for i in opts['ids'].split(',')]
        self._write(dataset.descriptive_series(ds, opts['which'], **options), opts['output'])

    def cmd_fit(self, opts):
        ds = self._dataset(opts)
        spec = self._model_spec(opts, ds)
        config = OptimizerConfig(method=opts['method'], max_evals=opts['max_evals'],
                                 tolerance=opts['tolerance'], start=parse_pairs(opts['start']),
                                 trace=opts['trace'], compute_hessian=opts['hessian'])
        fr = fit(spec, ds, config, threads=self._threads(opts))
        serialization.dump_fit(fr, opts['output'])
        text = summary_report(fr).render()
        if opts['summary']:
            Path(opts['summary']).write_text(text + '\n', encoding='utf-8')
        else:
            self.stdout.write(text)
        if not (fr.converged and fr.kkt1) or fr.diagnostics:
            raise CommandError('fit finished with warnings (see summary)', returncode=2)

    def cmd_predict(self, opts):
        ds = self._dataset(opts)
        fr = serialization.load_fit(opts['model'])
        table = prediction.predict_table(fr, ds, self._spending_fit(opts),
                                         number_or_date(opts['horizon']), self._discount(opts),
                                         threads=self._threads(opts))
        self._write(table, opts['output'])
        if opts['output']:
            meta = Path(str(opts['output']) + '.json')
            meta.write_text(json.dumps(table.attrs, indent=2) + '\n', encoding='utf-8')
        if opts['evaluate']:
            for key, value in prediction.evaluate(table).items():
                self.stderr.write(f'{key:<14} {value:.6g}')

    def cmd_diagnose(self, opts):
        ds = self._dataset(opts)
        fits = [serialization.load_fit(path) for path in opts['model']]
        threads = self._threads(opts)
        if opts['what'] == 'tracking':
            frame = prediction.plot_tracking_data(fits, ds, opts['cumulative'], opts['label'], threads)
        elif opts['what'] == 'pmf':
            frame = prediction.plot_pmf_data(fits, ds, opts['trans_bins'], opts['label'], threads)
        else:
            if len(fits) != 1:
                raise UsageError('spending density takes exactly one Gamma-Gamma model')
            frame = prediction.spending_density_data(fits[0], ds, opts['bins'])
        self._write(frame, opts['output'])

    def cmd_simulate(self, opts):
        try:
            doc = json.loads(Path(opts['scenario']).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f'cannot read scenario: {exc}', path=opts['scenario'])
        scenario = simulation.SimScenario.from_dict(doc)
        result = simulation.simulate(scenario, threads=self._threads(opts))
        self._write(result.transactions, opts['output'])
        if opts['truth']:
            self._write(result.truth, opts['truth'])
        if opts['covariates_output'] and result.covariates is not None:
            table = result.covariates.trans
            self._write(table.data, opts['covariates_output'], index=table.mode == 'static')

    def cmd_bootstrap(self, opts):
        ds = self._dataset(opts)
        fr = serialization.load_fit(opts['model'])
        spec = bootstrap.BootstrapSpec(
            num_boots=opts['num_boots'], seed=opts['seed'],
            quantiles=parse_floats(opts['quantiles']) if opts['quantiles'] else None)
        threads = self._threads(opts)
        if opts['what'] == 'params':
            frame = bootstrap.param_ci(fr, ds, spec, threads)
            index = True
        elif opts['what'] == 'predict':
            frame = bootstrap.predict_bootstrap(fr, ds, spec, self._spending_fit(opts),
                                                number_or_date(opts['horizon']),
                                                self._discount(opts), threads)
            index = False
        else:
            frame = bootstrap.tracking_band(fr, ds, spec, opts['cumulative'], threads)
            index = False
        if frame.attrs.get('failures'):
            self.stderr.write(f'{frame.attrs["failures"]} of {spec.num_boots} iterations excluded')
        self._write(frame, opts['output'], index=index)

    def cmd_lrtest(self, opts):
        constrained = serialization.load_fit(opts['constrained'])
        unconstrained = serialization.load_fit(opts['unconstrained'])
        result = lr_test(constrained, unconstrained,
                         names=(Path(opts['constrained']).stem, Path(opts['unconstrained']).stem))
        self.stdout.write(result.to_frame().to_string(na_rep='', float_format=lambda v: f'{v:.6g}'))

    def cmd_newcustomer(self, opts):
        fr = serialization.load_fit(opts['model'])
        params = fr.params
        if fr.family == 'pnbd-dynamic':
            raise UsageError('dynamic models need a covariate path; use clv.prediction.new_customer')

        def vector(text, names):
            values = parse_pairs(text)
            missing = [n for n in names if n not in values]
            if missing:
                raise UsageError('covariate values missing', names=missing)
            return [values[n] for n in names] if names else None

        result = prediction.new_customer(
            fr, opts['horizon'], self._spending_fit(opts),
            cov_trans=vector(opts['cov_trans'], params.names_trans),
            cov_life=vector(opts['cov_life'], params.names_life))
        self.stdout.write(f'expected transactions    {result.expected_transactions:.6g}')
        if result.expected_spend_per_order is not None:
            self.stdout.write(f'expected spend per order {result.expected_spend_per_order:.6g}')
            self.stdout.write(f'expected total           {result.expected_total:.6g}')

    def cmd_hessian(self, opts):
        ds = self._dataset(opts)
        fr = serialization.load_fit(opts['model'])
        fr = fr.with_hessian(serialization.model_spec(fr), ds, self._threads(opts))
        serialization.dump_fit(fr, opts['output'] or opts['model'])
        self.stdout.write(summary_report(fr).render())

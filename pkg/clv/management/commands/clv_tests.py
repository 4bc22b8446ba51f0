"""manage.py clv_tests: runs the test categories from tests.ALL_CATEGORIES.

    manage.py clv_tests                              alle Kategorien
    manage.py clv_tests --category PnbdTests         eine Kategorie
    manage.py clv_tests --category PnbdTests --case test_palive_bounds
    manage.py clv_tests --json                       Ergebnisse als JSON
    manage.py clv_tests --slow                       inkl. langsamer Orakel
"""
import json
import os

from django.core.management.base import BaseCommand, CommandError


def run_cases(category='', case=''):
    """Returns {results: [{category, categoryId, caseId, name, ok, detail, error, durationMs}], ...}."""
    from tests import ALL_CATEGORIES
    results = []
    for CatClass in ALL_CATEGORIES:
        if category and CatClass.__name__ != category:
            continue
        for c in CatClass.cases():
            if case and c.fn.__name__ != case:
                continue
            r = c.run()
            r['category'] = CatClass.name
            r['categoryId'] = CatClass.__name__
            r['caseId'] = c.fn.__name__
            results.append(r)
    return {'results': results, 'total': len(results),
            'passed': sum(1 for r in results if r['ok']),
            'failed': sum(1 for r in results if not r['ok'])}


class Command(BaseCommand):
    help = 'Run the CLV test categories'

    def add_arguments(self, parser):
        parser.add_argument('--category', default='', help='Klassenname, z.B. PnbdTests')
        parser.add_argument('--case', default='', help='Methodenname, z.B. test_palive_bounds')
        parser.add_argument('--json', action='store_true')
        parser.add_argument('--slow', action='store_true', help='auch langsame Monte-Carlo-Orakel')

    def handle(self, *args, **opts):
        if opts['slow']:
            os.environ['CLV_SLOW_TESTS'] = '1'
        report = run_cases(opts['category'].strip(), opts['case'].strip())
        if opts['json']:
            self.stdout.write(json.dumps(report, indent=2))
        else:
            for r in report['results']:
                mark = 'OK  ' if r['ok'] else 'FAIL'
                self.stdout.write(f"{mark} [{r['categoryId']}] {r['caseId']} "
                                  f"({r['durationMs']} ms) {r['detail']}")
                if r['error']:
                    self.stdout.write(r['error'])
            self.stdout.write(f"{report['passed']}/{report['total']} bestanden")
        if report['total'] == 0:
            raise CommandError('no test matched', returncode=1)
        if report['failed']:
            raise CommandError(f"{report['failed']} test(s) failed", returncode=1)
